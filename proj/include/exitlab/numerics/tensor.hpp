#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace exitlab {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);

// Dense row-major array of 64-bit floats. Matrices are rank 2, bias vectors
// rank 1, scalars are rank 1 with a single element.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::initializer_list<double> values);
  static Tensor zeros_like(const Tensor& other);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Rank-2 accessors; a rank-1 tensor is treated as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * cols(), cols());
  }

  double item() const;
  bool all_finite() const;
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

std::size_t shape_size(const Shape& shape);

// Plain kernels shared by the autodiff graph and the inference path.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matmul_transpose_a(const Tensor& a, const Tensor& b);  // aᵀ·b
Tensor matmul_transpose_b(const Tensor& a, const Tensor& b);  // a·bᵀ
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor relu(const Tensor& x);
// Rows of `x` selected by `indices`, in that order.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> indices);

double max_abs_diff(const Tensor& a, const Tensor& b);
double frobenius_norm(const Tensor& t);

}  // namespace exitlab
