#include "exitlab/numerics/graph.hpp"

#include <algorithm>
#include <cmath>

#include "exitlab/errors.hpp"

namespace exitlab {

std::string_view op_name(OpKind op) {
  switch (op) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kConstant: return "constant";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kAddBias: return "add_bias";
    case OpKind::kRelu: return "relu";
    case OpKind::kSoftmaxCrossEntropy: return "softmax_cross_entropy";
    case OpKind::kMeanSquaredError: return "mean_squared_error";
    case OpKind::kConcat: return "concat";
    case OpKind::kMeanRows: return "mean_rows";
    case OpKind::kWeightedSum: return "weighted_sum";
    case OpKind::kDetach: return "detach";
  }
  return "unknown";
}

namespace {

void accumulate(Tensor& into, const Tensor& delta) {
  if (into.empty()) {
    into = delta;
    return;
  }
  auto dst = into.data();
  auto src = delta.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

std::size_t class_id(double v, std::size_t num_classes) {
  if (!(v >= 0.0) || v != std::floor(v) || v >= static_cast<double>(num_classes)) {
    throw InvalidArgument("target " + std::to_string(v) + " is not a class id in [0, " +
                          std::to_string(num_classes) + ")");
  }
  return static_cast<std::size_t>(v);
}

// Row-wise softmax with the max subtracted.
Tensor softmax_rows(const Tensor& logits) {
  Tensor p = logits;
  const std::size_t n = logits.rows(), c = logits.cols();
  for (std::size_t i = 0; i < n; ++i) {
    double* row = p.data().data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      row[j] = std::exp(row[j] - mx);
      z += row[j];
    }
    for (std::size_t j = 0; j < c; ++j) row[j] /= z;
  }
  return p;
}

}  // namespace

NodeId Graph::push(OpKind op, std::vector<NodeId> inputs, std::vector<double> weights,
                   std::string name) {
  for (auto id : inputs) check_input(id);
  nodes_.push_back(Node{op, std::move(inputs), std::move(weights), std::move(name), Tensor{}});
  evaluated_ = false;
  return nodes_.size() - 1;
}

void Graph::check_input(NodeId id) const {
  if (id >= nodes_.size()) throw InvalidArgument("graph input id " + std::to_string(id) + " does not exist");
}

NodeId Graph::leaf(std::string name) {
  if (leaf_index_.contains(name)) throw InvalidArgument("duplicate leaf '" + name + "'");
  const NodeId id = push(OpKind::kLeaf, {}, {}, name);
  leaf_index_.emplace(std::move(name), id);
  return id;
}

NodeId Graph::constant(Tensor value) {
  const NodeId id = push(OpKind::kConstant, {});
  nodes_[id].value = std::move(value);
  return id;
}

NodeId Graph::matmul(NodeId a, NodeId b) { return push(OpKind::kMatMul, {a, b}); }
NodeId Graph::add_bias(NodeId x, NodeId bias) { return push(OpKind::kAddBias, {x, bias}); }
NodeId Graph::relu(NodeId x) { return push(OpKind::kRelu, {x}); }
NodeId Graph::softmax_cross_entropy(NodeId logits, NodeId targets) {
  return push(OpKind::kSoftmaxCrossEntropy, {logits, targets});
}
NodeId Graph::mean_squared_error(NodeId prediction, NodeId target) {
  return push(OpKind::kMeanSquaredError, {prediction, target});
}
NodeId Graph::concat(NodeId a, NodeId b) { return push(OpKind::kConcat, {a, b}); }
NodeId Graph::mean_rows(NodeId x) { return push(OpKind::kMeanRows, {x}); }
NodeId Graph::detach(NodeId x) { return push(OpKind::kDetach, {x}); }

NodeId Graph::weighted_sum(std::vector<NodeId> terms, std::vector<double> weights) {
  if (terms.empty() || terms.size() != weights.size()) {
    throw InvalidArgument("weighted_sum needs one weight per term and at least one term");
  }
  return push(OpKind::kWeightedSum, std::move(terms), std::move(weights));
}

NodeId Graph::root() const {
  if (nodes_.empty()) throw InvalidArgument("empty graph has no root");
  return nodes_.size() - 1;
}

const Tensor& Graph::value(NodeId id) const {
  const Node& node = nodes_.at(id);
  if (!evaluated_ && node.op != OpKind::kConstant) {
    throw InvalidArgument("graph value requested before forward()");
  }
  return node.value;
}

std::vector<std::string> Graph::leaf_names() const {
  std::vector<std::string> names;
  for (const auto& node : nodes_) {
    if (node.op == OpKind::kLeaf) names.push_back(node.name);
  }
  return names;
}

std::string Graph::describe(NodeId id) const {
  const Node& node = nodes_[id];
  std::string s = "node " + std::to_string(id) + " (" + std::string(op_name(node.op));
  if (!node.name.empty()) s += " '" + node.name + "'";
  return s + ")";
}

Tensor Graph::evaluate(NodeId id, const Bindings& bindings) const {
  const Node& node = nodes_[id];
  auto in = [&](std::size_t i) -> const Tensor& { return nodes_[node.inputs[i]].value; };
  try {
    switch (node.op) {
      case OpKind::kLeaf: {
        const Tensor* bound = bindings.find(node.name);
        if (!bound) throw InvalidArgument("leaf '" + node.name + "' is not bound");
        return *bound;
      }
      case OpKind::kConstant:
        return node.value;
      case OpKind::kMatMul:
        if (in(0).rank() != 2 || in(1).rank() != 2) throw ShapeError("matmul operands must be matrices");
        return exitlab::matmul(in(0), in(1));
      case OpKind::kAddBias:
        if (in(0).rank() != 2) throw ShapeError("add_bias input must be a matrix");
        return exitlab::add_bias(in(0), in(1));
      case OpKind::kRelu:
        return exitlab::relu(in(0));
      case OpKind::kSoftmaxCrossEntropy: {
        const Tensor& z = in(0);
        const Tensor& t = in(1);
        if (z.rank() != 2 || t.size() != z.rows()) {
          throw ShapeError("cross-entropy expects n×C logits and n targets, got " +
                           shape_to_string(z.shape()) + " and " + shape_to_string(t.shape()));
        }
        const std::size_t n = z.rows(), c = z.cols();
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          auto row = z.row(i);
          const double mx = *std::max_element(row.begin(), row.end());
          double s = 0.0;
          for (double v : row) s += std::exp(v - mx);
          total += mx + std::log(s) - row[class_id(t[i], c)];
        }
        return Tensor::scalar(total / static_cast<double>(n));
      }
      case OpKind::kMeanSquaredError: {
        const Tensor& p = in(0);
        const Tensor& t = in(1);
        if (p.size() != t.size() || p.rows() != t.rows()) {
          throw ShapeError("mean_squared_error operands differ: " + shape_to_string(p.shape()) +
                           " vs " + shape_to_string(t.shape()));
        }
        double s = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] - t[i]) * (p[i] - t[i]);
        return Tensor::scalar(s / static_cast<double>(p.size()));
      }
      case OpKind::kConcat: {
        const Tensor& a = in(0);
        const Tensor& b = in(1);
        if (a.rank() != 2 || b.rank() != 2 || a.rows() != b.rows()) {
          throw ShapeError("concat needs matrices with equal row counts, got " +
                           shape_to_string(a.shape()) + " and " + shape_to_string(b.shape()));
        }
        const std::size_t n = a.rows(), p = a.cols(), q = b.cols();
        Tensor out({n, p + q});
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < p; ++j) out.at(i, j) = a.at(i, j);
          for (std::size_t j = 0; j < q; ++j) out.at(i, p + j) = b.at(i, j);
        }
        return out;
      }
      case OpKind::kMeanRows: {
        const Tensor& x = in(0);
        const std::size_t n = x.rows(), m = x.cols();
        Tensor out({m});
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) out[j] += x.at(i, j);
        for (auto& v : out.data()) v /= static_cast<double>(n);
        return out;
      }
      case OpKind::kWeightedSum: {
        Tensor out = Tensor::zeros_like(in(0));
        for (std::size_t k = 0; k < node.inputs.size(); ++k) {
          const Tensor& term = in(k);
          if (!term.same_shape(out)) throw ShapeError("weighted_sum terms differ in shape");
          for (std::size_t i = 0; i < out.size(); ++i) out[i] += node.weights[k] * term[i];
        }
        return out;
      }
      case OpKind::kDetach:
        return in(0);
    }
  } catch (const ShapeError& e) {
    throw ShapeError(describe(id) + ": " + e.what());
  }
  throw InvalidArgument("unhandled op");
}

const Tensor& Graph::forward(const Bindings& bindings) {
  if (nodes_.empty()) throw InvalidArgument("forward() on an empty graph");
  evaluated_ = false;
  for (NodeId id = 0; id < nodes_.size(); ++id) {
    if (nodes_[id].op == OpKind::kConstant) continue;
    nodes_[id].value = evaluate(id, bindings);
    if (!nodes_[id].value.all_finite()) {
      throw NonFiniteError(describe(id) + " produced a non-finite value");
    }
  }
  evaluated_ = true;
  return nodes_.back().value;
}

GradientMap Graph::grad(const std::vector<std::string>& wrt, NodeId root) const {
  if (!evaluated_) throw InvalidArgument("grad() requires a prior forward()");
  check_input(root);
  if (nodes_[root].value.size() != 1) {
    throw ShapeError("grad() root " + describe(root) + " is not a scalar: " +
                     shape_to_string(nodes_[root].value.shape()));
  }

  std::vector<Tensor> grads(root + 1);
  grads[root] = Tensor(nodes_[root].value.shape(), 1.0);

  for (NodeId id = root + 1; id-- > 0;) {
    const Tensor& g = grads[id];
    if (g.empty()) continue;
    const Node& node = nodes_[id];
    auto in = [&](std::size_t i) -> const Tensor& { return nodes_[node.inputs[i]].value; };
    auto send = [&](std::size_t i, const Tensor& delta) { accumulate(grads[node.inputs[i]], delta); };

    switch (node.op) {
      case OpKind::kLeaf:
      case OpKind::kConstant:
      case OpKind::kDetach:
        break;
      case OpKind::kMatMul:
        send(0, matmul_transpose_b(g, in(1)));
        send(1, matmul_transpose_a(in(0), g));
        break;
      case OpKind::kAddBias: {
        send(0, g);
        const std::size_t m = g.cols();
        Tensor db({m});
        for (std::size_t i = 0; i < g.size(); ++i) db[i % m] += g[i];
        send(1, db);
        break;
      }
      case OpKind::kRelu: {
        Tensor dx = g;
        const Tensor& x = in(0);
        for (std::size_t i = 0; i < dx.size(); ++i) {
          if (!(x[i] > 0.0)) dx[i] = 0.0;
        }
        send(0, dx);
        break;
      }
      case OpKind::kSoftmaxCrossEntropy: {
        const Tensor& z = in(0);
        const Tensor& t = in(1);
        Tensor dz = softmax_rows(z);
        const std::size_t n = z.rows(), c = z.cols();
        const double scale = g[0] / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
          dz.at(i, class_id(t[i], c)) -= 1.0;
          for (std::size_t j = 0; j < c; ++j) dz.at(i, j) *= scale;
        }
        send(0, dz);
        break;
      }
      case OpKind::kMeanSquaredError: {
        const Tensor& p = in(0);
        const Tensor& t = in(1);
        Tensor dp = Tensor::zeros_like(p);
        Tensor dt = Tensor::zeros_like(t);
        const double scale = 2.0 * g[0] / static_cast<double>(p.size());
        for (std::size_t i = 0; i < p.size(); ++i) {
          dp[i] = scale * (p[i] - t[i]);
          dt[i] = -dp[i];
        }
        send(0, dp);
        send(1, dt);
        break;
      }
      case OpKind::kConcat: {
        const Tensor& a = in(0);
        const Tensor& b = in(1);
        const std::size_t n = a.rows(), p = a.cols(), q = b.cols();
        Tensor da = Tensor::zeros_like(a);
        Tensor dbm = Tensor::zeros_like(b);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < p; ++j) da.at(i, j) = g.at(i, j);
          for (std::size_t j = 0; j < q; ++j) dbm.at(i, j) = g.at(i, p + j);
        }
        send(0, da);
        send(1, dbm);
        break;
      }
      case OpKind::kMeanRows: {
        const Tensor& x = in(0);
        Tensor dx = Tensor::zeros_like(x);
        const std::size_t n = x.rows(), m = x.cols();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) dx.at(i, j) = g[j] / static_cast<double>(n);
        send(0, dx);
        break;
      }
      case OpKind::kWeightedSum:
        for (std::size_t k = 0; k < node.inputs.size(); ++k) {
          Tensor d = g;
          for (auto& v : d.data()) v *= node.weights[k];
          send(k, d);
        }
        break;
    }
  }

  GradientMap out;
  for (const auto& name : wrt) {
    auto it = leaf_index_.find(name);
    if (it == leaf_index_.end()) throw InvalidArgument("grad() wrt unknown leaf '" + name + "'");
    const NodeId id = it->second;
    if (id <= root && !grads[id].empty()) {
      out.emplace(name, grads[id]);
    } else {
      out.emplace(name, Tensor::zeros_like(nodes_[id].value));
    }
  }
  return out;
}

}  // namespace exitlab
