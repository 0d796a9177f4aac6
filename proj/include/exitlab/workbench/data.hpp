#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "exitlab/common/dataset.hpp"

namespace exitlab {

enum class SyntheticKind { kSpirals, kTieredBlobs };

std::string to_string(SyntheticKind kind);
SyntheticKind parse_synthetic_kind(const std::string& name);

struct SyntheticSpec {
  SyntheticKind kind = SyntheticKind::kTieredBlobs;
  std::size_t samples = 3000;
  std::size_t dim = 8;
  std::size_t classes = 4;
  double noise = 0.5;
  std::uint64_t seed = 0;
  // tiered-blobs: fractions of samples near their centroid and near a
  // decision boundary; the rest sit in between.
  double easy_fraction = 0.4;
  double hard_fraction = 0.3;

  void validate() const;
};

using SplitFractions = std::array<double, 3>;
inline constexpr SplitFractions kDefaultFractions{0.7, 0.15, 0.15};

// Largest-remainder rounding of n into three parts; ties go to the later part.
std::array<std::size_t, 3> split_sizes(std::size_t n, const SplitFractions& fractions);

Dataset generate_synthetic(const SyntheticSpec& spec);

struct CsvOptions {
  std::string label_column;
  SplitFractions fractions = kDefaultFractions;
  std::uint64_t seed = 0;
  bool regression = false;
};

// Rectangular numeric CSV with a header row. Features are standardised with
// training-split statistics.
Dataset load_csv_dataset(const std::string& path, const CsvOptions& options);
Dataset parse_csv_dataset(const std::string& text, const CsvOptions& options, const std::string& source = "<csv>");

}  // namespace exitlab
