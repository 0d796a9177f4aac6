#include <algorithm>
#include <cmath>

#include "exitlab/errors.hpp"
#include "exitlab/multiexit/model.hpp"

namespace exitlab {

namespace {

Tensor apply_head(const std::vector<DenseLayer>& layers, const Tensor& z) {
  Tensor h = add_bias(matmul(z, layers[0].weight), layers[0].bias);
  for (std::size_t l = 1; l < layers.size(); ++l) {
    h = add_bias(matmul(relu(h), layers[l].weight), layers[l].bias);
  }
  return h;
}

}  // namespace

ExitOutputs forward_all(const MultiExitModel& model, const Tensor& batch, ForwardCapture capture) {
  const auto& bb = model.config().backbone;
  if (batch.rank() != 2 || batch.cols() != bb.input_dim) {
    throw ShapeError("batch " + shape_to_string(batch.shape()) + " does not match input width " +
                     std::to_string(bb.input_dim));
  }
  ExitOutputs out;
  out.logits.resize(model.num_exits());
  std::size_t next_exit = 0;
  Tensor z = batch;
  for (std::size_t i = 0; i < model.num_blocks(); ++i) {
    const auto& blk = model.block(i);
    z = relu(add_bias(matmul(z, blk.weight), blk.bias));
    if (capture.activations) out.activations.push_back(z);
    while (next_exit < model.num_exits() && model.placement(next_exit) == i + 1) {
      out.logits[next_exit] = apply_head(model.head(next_exit), z);
      ++next_exit;
    }
    if (next_exit == model.num_exits() && !capture.activations) break;
  }
  return out;
}

double cross_entropy(const Tensor& logits, std::span<const double> targets) {
  const std::size_t n = logits.rows(), c = logits.cols();
  if (targets.size() != n) throw ShapeError("cross_entropy: targets do not match logit rows");
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    auto row = logits.row(i);
    const double mx = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (double v : row) s += std::exp(v - mx);
    const auto t = static_cast<std::size_t>(targets[i]);
    if (targets[i] < 0.0 || t >= c) throw InvalidArgument("cross_entropy: class id out of range");
    total += mx + std::log(s) - row[t];
  }
  return total / static_cast<double>(n);
}

double mean_squared_error(const Tensor& predictions, std::span<const double> targets) {
  if (predictions.size() != targets.size()) throw ShapeError("mean_squared_error: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const double d = predictions[i] - targets[i];
    s += d * d;
  }
  return s / static_cast<double>(targets.size());
}

MultiExitLoss multi_exit_loss(const std::vector<Tensor>& logits, std::span<const double> targets,
                              const Task& task, std::span<const double> alpha) {
  if (alpha.size() != logits.size()) {
    throw InvalidArgument("alpha has " + std::to_string(alpha.size()) + " entries for " +
                          std::to_string(logits.size()) + " exits");
  }
  MultiExitLoss out;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    const double l = task.is_classification() ? cross_entropy(logits[k], targets)
                                              : mean_squared_error(logits[k], targets);
    out.per_exit.push_back(l);
    out.total += alpha[k] * l;
  }
  return out;
}

Tensor targets_column(std::span<const double> targets) {
  return Tensor({targets.size(), 1}, std::vector<double>(targets.begin(), targets.end()));
}

ModelGraph build_graph(const MultiExitModel& model, const GraphOptions& options) {
  const std::size_t K = model.num_exits();
  if (options.alpha.size() != K) {
    throw InvalidArgument("alpha has " + std::to_string(options.alpha.size()) + " entries for " +
                          std::to_string(K) + " exits");
  }
  if (!options.detach_heads.empty() && options.detach_heads.size() != K) {
    throw InvalidArgument("detach_heads must be empty or have one flag per exit");
  }
  ModelGraph mg;
  Graph& g = mg.graph;
  mg.input = g.leaf(kInputLeaf);
  mg.target = g.leaf(kTargetLeaf);
  mg.logits.assign(K, 0);
  mg.losses.assign(K, 0);

  std::size_t next_exit = 0;
  NodeId z = mg.input;
  const std::size_t last_block = model.placement(K - 1);
  for (std::size_t i = 0; i < last_block; ++i) {
    const NodeId w = g.leaf(MultiExitModel::block_weight_name(i));
    const NodeId b = g.leaf(MultiExitModel::block_bias_name(i));
    z = g.relu(g.add_bias(g.matmul(z, w), b));
    while (next_exit < K && model.placement(next_exit) == i + 1) {
      const std::size_t k = next_exit++;
      NodeId h = (!options.detach_heads.empty() && options.detach_heads[k]) ? g.detach(z) : z;
      const auto& layers = model.head(k);
      for (std::size_t l = 0; l < layers.size(); ++l) {
        if (l > 0) h = g.relu(h);
        const NodeId hw = g.leaf(MultiExitModel::head_weight_name(k, l));
        const NodeId hb = g.leaf(MultiExitModel::head_bias_name(k, l));
        h = g.add_bias(g.matmul(h, hw), hb);
      }
      mg.logits[k] = h;
      mg.losses[k] = model.task().is_classification() ? g.softmax_cross_entropy(h, mg.target)
                                                      : g.mean_squared_error(h, mg.target);
    }
  }

  std::vector<NodeId> terms;
  std::vector<double> weights;
  for (std::size_t k = 0; k < K; ++k) {
    if (options.alpha[k] < 0.0) throw InvalidArgument("alpha entries must be non-negative");
    if (options.alpha[k] == 0.0) continue;
    terms.push_back(mg.losses[k]);
    weights.push_back(options.alpha[k]);
    mg.loss_exits.push_back(k);
  }
  if (terms.empty()) throw InvalidArgument("at least one alpha entry must be positive");
  mg.total = g.weighted_sum(std::move(terms), std::move(weights));
  return mg;
}

Bindings bind_model(const MultiExitModel& model, const Tensor& input, const Tensor& targets) {
  Bindings b;
  for (const auto& p : model.parameters()) b.bind(p.name, *p.tensor);
  b.bind(kInputLeaf, input);
  b.bind(kTargetLeaf, targets);
  return b;
}

double dense_flops(std::size_t in, std::size_t out) {
  return 2.0 * static_cast<double>(in) * static_cast<double>(out) + static_cast<double>(out);
}

CostModel cost_model(const MultiExitModel& model) {
  CostModel cost;
  for (std::size_t i = 0; i < model.num_blocks(); ++i) {
    const auto& w = model.block(i).weight;
    cost.block_flops.push_back(dense_flops(w.rows(), w.cols()));
  }
  for (std::size_t k = 0; k < model.num_exits(); ++k) {
    double f = 0.0;
    for (const auto& layer : model.head(k)) f += dense_flops(layer.weight.rows(), layer.weight.cols());
    cost.head_flops.push_back(f);
  }
  cost.placements = model.config().placements;
  for (double f : cost.block_flops) cost.backbone_cost += f;
  cost.backbone_cost += cost.head_flops.back();
  return cost;
}

double exit_cost(const CostModel& cost, std::size_t exit) {
  if (exit >= cost.num_exits()) {
    throw InvalidArgument("exit index " + std::to_string(exit) + " out of range for " +
                          std::to_string(cost.num_exits()) + " exits");
  }
  double c = 0.0;
  for (std::size_t i = 0; i < cost.placements[exit]; ++i) c += cost.block_flops[i];
  for (std::size_t j = 0; j <= exit; ++j) c += cost.head_flops[j];
  return c;
}

}  // namespace exitlab
