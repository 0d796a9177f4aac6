#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "exitlab/numerics/tensor.hpp"

namespace exitlab {

using NodeId = std::size_t;

enum class OpKind {
  kLeaf,
  kConstant,
  kMatMul,
  kAddBias,
  kRelu,
  kSoftmaxCrossEntropy,
  kMeanSquaredError,
  kConcat,
  kMeanRows,
  kWeightedSum,
  kDetach,
};

std::string_view op_name(OpKind op);

// Non-owning name -> tensor map. Bound tensors only need to outlive the
// forward() call; the graph copies leaf values into its cache.
class Bindings {
 public:
  void bind(std::string name, const Tensor& value) { map_[std::move(name)] = &value; }
  const Tensor* find(const std::string& name) const {
    auto it = map_.find(name);
    return it == map_.end() ? nullptr : it->second;
  }

 private:
  std::unordered_map<std::string, const Tensor*> map_;
};

using GradientMap = std::map<std::string, Tensor>;

// Static computation graph evaluated by forward() and differentiated in
// reverse mode by grad(). Nodes are appended in topological order by
// construction: every builder takes only already existing node ids.
class Graph {
 public:
  NodeId leaf(std::string name);
  NodeId constant(Tensor value);

  NodeId matmul(NodeId a, NodeId b);
  NodeId add_bias(NodeId x, NodeId bias);
  NodeId relu(NodeId x);
  // Mean over rows of -log softmax(logits)[target]; `targets` holds class
  // ids as an n×1 column. Log-sum-exp stabilised.
  NodeId softmax_cross_entropy(NodeId logits, NodeId targets);
  NodeId mean_squared_error(NodeId prediction, NodeId target);
  // Column-wise concatenation of two n-row matrices.
  NodeId concat(NodeId a, NodeId b);
  // n×m -> rank-1 of length m.
  NodeId mean_rows(NodeId x);
  NodeId weighted_sum(std::vector<NodeId> terms, std::vector<double> weights);
  // Identity in the forward pass, blocks the gradient in the backward pass.
  NodeId detach(NodeId x);

  std::size_t size() const { return nodes_.size(); }
  NodeId root() const;
  OpKind op(NodeId id) const { return nodes_.at(id).op; }
  const std::vector<NodeId>& inputs(NodeId id) const { return nodes_.at(id).inputs; }
  const Tensor& value(NodeId id) const;
  bool has_leaf(const std::string& name) const { return leaf_index_.contains(name); }
  std::vector<std::string> leaf_names() const;

  // Evaluates every node and caches the values. Returns the value of the
  // last node.
  const Tensor& forward(const Bindings& bindings);

  // d(root)/d(leaf) for every requested leaf. Leaves with no path to the
  // root receive exact zeros.
  GradientMap grad(const std::vector<std::string>& wrt, NodeId root) const;
  GradientMap grad(const std::vector<std::string>& wrt) const { return grad(wrt, root()); }

 private:
  struct Node {
    OpKind op;
    std::vector<NodeId> inputs;
    std::vector<double> weights;
    std::string name;
    Tensor value;
  };

  NodeId push(OpKind op, std::vector<NodeId> inputs, std::vector<double> weights = {},
              std::string name = {});
  void check_input(NodeId id) const;
  Tensor evaluate(NodeId id, const Bindings& bindings) const;
  std::string describe(NodeId id) const;

  std::vector<Node> nodes_;
  std::unordered_map<std::string, NodeId> leaf_index_;
  bool evaluated_ = false;
};

inline const Tensor& forward(Graph& graph, const Bindings& bindings) {
  return graph.forward(bindings);
}

inline GradientMap grad(const Graph& graph, const std::vector<std::string>& wrt) {
  return graph.grad(wrt);
}

}  // namespace exitlab
