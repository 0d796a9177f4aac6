#include "exitlab/multiexit/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "exitlab/errors.hpp"
#include "exitlab/numerics/rng.hpp"

namespace exitlab {

void HeadSpec::validate() const {
  if (depth != 1 && depth != 2) throw InvalidArgument("head depth must be 1 or 2");
  if (depth == 2 && hidden == 0) throw InvalidArgument("two-layer heads need hidden > 0");
}

void ModelConfig::validate() const {
  if (backbone.blocks == 0 || backbone.width == 0 || backbone.input_dim == 0) {
    throw InvalidArgument("backbone needs at least one block and positive widths");
  }
  if (placements.empty()) throw InvalidArgument("invalid placement: at least one head is required");
  for (std::size_t k = 0; k < placements.size(); ++k) {
    const auto p = placements[k];
    if (p == 0) throw InvalidArgument("invalid placement: index 0 would bypass the backbone");
    if (p > backbone.blocks) {
      throw InvalidArgument("invalid placement: " + std::to_string(p) + " exceeds block count " +
                            std::to_string(backbone.blocks));
    }
    if (k > 0 && p <= placements[k - 1]) {
      throw InvalidArgument("invalid placement: placements must be strictly increasing (duplicate or unordered " +
                            std::to_string(p) + ")");
    }
  }
  head.validate();
  if (task.is_classification() && task.num_classes < 2) {
    throw InvalidArgument("classification needs at least two classes");
  }
}

DenseLayer init_dense(std::size_t in, std::size_t out, std::uint64_t seed,
                      const std::string& weight_name) {
  DenseLayer layer{Tensor({in, out}), Tensor({out})};
  CounterRng rng(seed, weight_name);
  const double bound = std::sqrt(6.0 / static_cast<double>(in));
  for (auto& w : layer.weight.data()) w = rng.uniform(-bound, bound);
  return layer;
}

MultiExitModel::MultiExitModel(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  const auto& bb = config_.backbone;
  for (std::size_t i = 0; i < bb.blocks; ++i) {
    const std::size_t in = i == 0 ? bb.input_dim : bb.width;
    blocks_.push_back(init_dense(in, bb.width, config_.seed, block_weight_name(i)));
  }
  const std::size_t out = config_.task.output_dim();
  for (std::size_t k = 0; k < config_.placements.size(); ++k) {
    std::vector<DenseLayer> layers;
    if (config_.head.depth == 1) {
      layers.push_back(init_dense(bb.width, out, config_.seed, head_weight_name(k, 0)));
    } else {
      layers.push_back(init_dense(bb.width, config_.head.hidden, config_.seed, head_weight_name(k, 0)));
      layers.push_back(init_dense(config_.head.hidden, out, config_.seed, head_weight_name(k, 1)));
    }
    heads_.push_back(std::move(layers));
  }
}

MultiExitModel build_model(const ModelConfig& config) { return MultiExitModel(config); }

std::string MultiExitModel::block_weight_name(std::size_t block) {
  return "backbone." + std::to_string(block) + ".weight";
}
std::string MultiExitModel::block_bias_name(std::size_t block) {
  return "backbone." + std::to_string(block) + ".bias";
}
std::string MultiExitModel::head_weight_name(std::size_t exit, std::size_t layer) {
  return "head." + std::to_string(exit) + "." + std::to_string(layer) + ".weight";
}
std::string MultiExitModel::head_bias_name(std::size_t exit, std::size_t layer) {
  return "head." + std::to_string(exit) + "." + std::to_string(layer) + ".bias";
}

std::vector<ParamRef> MultiExitModel::parameters() {
  std::vector<ParamRef> out;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    out.push_back({block_weight_name(i), &blocks_[i].weight});
    out.push_back({block_bias_name(i), &blocks_[i].bias});
  }
  for (std::size_t k = 0; k < heads_.size(); ++k) {
    for (std::size_t l = 0; l < heads_[k].size(); ++l) {
      out.push_back({head_weight_name(k, l), &heads_[k][l].weight});
      out.push_back({head_bias_name(k, l), &heads_[k][l].bias});
    }
  }
  return out;
}

std::vector<ConstParamRef> MultiExitModel::parameters() const {
  std::vector<ConstParamRef> out;
  for (auto& p : const_cast<MultiExitModel*>(this)->parameters()) out.push_back({p.name, p.tensor});
  return out;
}

std::vector<std::string> MultiExitModel::parameter_names() const {
  std::vector<std::string> names;
  for (const auto& p : parameters()) names.push_back(p.name);
  return names;
}

std::vector<std::string> MultiExitModel::block_parameter_names(std::size_t block) const {
  return {block_weight_name(block), block_bias_name(block)};
}

std::vector<std::string> MultiExitModel::backbone_parameter_names() const {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    names.push_back(block_weight_name(i));
    names.push_back(block_bias_name(i));
  }
  return names;
}

std::vector<std::string> MultiExitModel::head_parameter_names(std::size_t exit) const {
  std::vector<std::string> names;
  for (std::size_t l = 0; l < heads_.at(exit).size(); ++l) {
    names.push_back(head_weight_name(exit, l));
    names.push_back(head_bias_name(exit, l));
  }
  return names;
}

Tensor& MultiExitModel::parameter(const std::string& name) {
  for (auto& p : parameters()) {
    if (p.name == name) return *p.tensor;
  }
  throw InvalidArgument("unknown parameter '" + name + "'");
}

const Tensor& MultiExitModel::parameter(const std::string& name) const {
  return const_cast<MultiExitModel*>(this)->parameter(name);
}

std::size_t MultiExitModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor->size();
  return n;
}

std::vector<double> flatten_parameters(const MultiExitModel& model) {
  std::vector<double> flat;
  flat.reserve(model.parameter_count());
  for (const auto& p : model.parameters()) {
    flat.insert(flat.end(), p.tensor->data().begin(), p.tensor->data().end());
  }
  return flat;
}

void assign_parameters(MultiExitModel& model, std::span<const double> flat) {
  if (flat.size() != model.parameter_count()) {
    throw ShapeError("flat parameter vector has " + std::to_string(flat.size()) + " entries, model has " +
                     std::to_string(model.parameter_count()));
  }
  std::size_t offset = 0;
  for (auto& p : model.parameters()) {
    auto dst = p.tensor->data();
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), dst.size(), dst.begin());
    offset += dst.size();
  }
}

std::uint64_t parameter_hash(const MultiExitModel& model, const std::vector<std::string>& names) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : model.parameters()) {
    if (!names.empty() && std::find(names.begin(), names.end(), p.name) == names.end()) continue;
    h = fnv1a64(p.name, h);
    const auto data = p.tensor->data();
    h = fnv1a64(std::string_view(reinterpret_cast<const char*>(data.data()), data.size_bytes()), h);
  }
  return h;
}

bool same_architecture(const MultiExitModel& a, const MultiExitModel& b) {
  const auto& ca = a.config();
  const auto& cb = b.config();
  return ca.backbone == cb.backbone && ca.placements == cb.placements && ca.head == cb.head &&
         ca.task == cb.task;
}

std::vector<std::size_t> placement_scheme(PlacementScheme scheme, std::size_t blocks, std::size_t n) {
  switch (scheme) {
    case PlacementScheme::kEveryN: {
      if (n < 1 || n > blocks) throw InvalidArgument("Every-n needs 1 <= n <= L");
      std::vector<std::size_t> out;
      for (std::size_t p = n; p <= blocks; p += n) out.push_back(p);
      if (out.back() != blocks) out.push_back(blocks);
      return out;
    }
    case PlacementScheme::kDenseSparse:
      if (blocks != 14) throw InvalidArgument("unsupported scheme: Dense-Sparse is defined for 14 blocks only");
      return {1, 2, 3, 4, 5, 6, 7, 11};
    case PlacementScheme::kSparseDense:
      if (blocks != 14) throw InvalidArgument("unsupported scheme: Sparse-Dense is defined for 14 blocks only");
      return {1, 4, 8, 9, 10, 11, 12, 13, 14};
  }
  throw InvalidArgument("unsupported placement scheme");
}

}  // namespace exitlab
