#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "exitlab/numerics/graph.hpp"
#include "exitlab/numerics/optim.hpp"
#include "exitlab/numerics/tensor.hpp"

namespace exitlab {

enum class TaskKind { kClassification, kRegression };

struct Task {
  TaskKind kind = TaskKind::kClassification;
  std::size_t num_classes = 2;

  static Task classification(std::size_t classes) { return {TaskKind::kClassification, classes}; }
  static Task regression() { return {TaskKind::kRegression, 0}; }
  bool is_classification() const { return kind == TaskKind::kClassification; }
  std::size_t output_dim() const { return is_classification() ? num_classes : 1; }
  friend bool operator==(const Task&, const Task&) = default;
};

// Backbone block i is dense(in -> width) + ReLU; block 0 reads the input
// features, every later block maps width -> width.
struct BackboneSpec {
  std::size_t input_dim = 2;
  std::size_t width = 64;
  std::size_t blocks = 6;
  friend bool operator==(const BackboneSpec&, const BackboneSpec&) = default;
};

struct HeadSpec {
  int depth = 1;
  std::size_t hidden = 0;

  void validate() const;
  friend bool operator==(const HeadSpec&, const HeadSpec&) = default;
};

struct ModelConfig {
  BackboneSpec backbone;
  // 1-based block counts: head k reads the output of block placements[k].
  std::vector<std::size_t> placements;
  HeadSpec head;
  Task task;
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct DenseLayer {
  Tensor weight;  // in × out
  Tensor bias;    // out
};

// Backbone blocks plus one internal classifier per placement. The head
// attached at the largest placement is the final classifier. Exits are
// indexed 0..K-1 in code.
class MultiExitModel {
 public:
  explicit MultiExitModel(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  std::size_t num_blocks() const { return blocks_.size(); }
  std::size_t num_exits() const { return heads_.size(); }
  std::size_t final_exit() const { return heads_.size() - 1; }
  std::size_t placement(std::size_t exit) const { return config_.placements.at(exit); }
  const Task& task() const { return config_.task; }

  DenseLayer& block(std::size_t i) { return blocks_.at(i); }
  const DenseLayer& block(std::size_t i) const { return blocks_.at(i); }
  std::vector<DenseLayer>& head(std::size_t k) { return heads_.at(k); }
  const std::vector<DenseLayer>& head(std::size_t k) const { return heads_.at(k); }

  // Canonical order: backbone blocks first, then heads in exit order.
  std::vector<ParamRef> parameters();
  std::vector<ConstParamRef> parameters() const;
  std::vector<std::string> parameter_names() const;
  std::vector<std::string> backbone_parameter_names() const;
  std::vector<std::string> block_parameter_names(std::size_t block) const;
  std::vector<std::string> head_parameter_names(std::size_t exit) const;
  Tensor& parameter(const std::string& name);
  const Tensor& parameter(const std::string& name) const;
  std::size_t parameter_count() const;

  static std::string block_weight_name(std::size_t block);
  static std::string block_bias_name(std::size_t block);
  static std::string head_weight_name(std::size_t exit, std::size_t layer);
  static std::string head_bias_name(std::size_t exit, std::size_t layer);

 private:
  ModelConfig config_;
  std::vector<DenseLayer> blocks_;
  std::vector<std::vector<DenseLayer>> heads_;
};

MultiExitModel build_model(const ModelConfig& config);

// Kaiming-uniform (fan-in) weights from a stream keyed by (seed, name);
// biases are zero.
DenseLayer init_dense(std::size_t in, std::size_t out, std::uint64_t seed,
                      const std::string& weight_name);

// Flattened parameter vector in canonical order.
std::vector<double> flatten_parameters(const MultiExitModel& model);
void assign_parameters(MultiExitModel& model, std::span<const double> flat);
// FNV-1a over the raw bytes of the selected parameters (all when empty).
std::uint64_t parameter_hash(const MultiExitModel& model, const std::vector<std::string>& names = {});
bool same_architecture(const MultiExitModel& a, const MultiExitModel& b);

enum class PlacementScheme { kEveryN, kDenseSparse, kSparseDense };

std::vector<std::size_t> placement_scheme(PlacementScheme scheme, std::size_t blocks,
                                          std::size_t n = 1);

struct ForwardCapture {
  bool activations = false;
};

struct ExitOutputs {
  std::vector<Tensor> logits;       // one n × out matrix per exit
  std::vector<Tensor> activations;  // post-block representation, one per block when captured
};

// Plain (graph-free) evaluation of every exit. Read-only on the model.
ExitOutputs forward_all(const MultiExitModel& model, const Tensor& batch, ForwardCapture capture = {});

struct MultiExitLoss {
  double total = 0.0;
  std::vector<double> per_exit;
};

// Cross-entropy per exit for classification (targets are class ids), mean
// squared error for regression. total = sum_k alpha_k * L_k.
MultiExitLoss multi_exit_loss(const std::vector<Tensor>& logits, std::span<const double> targets,
                              const Task& task, std::span<const double> alpha);

double cross_entropy(const Tensor& logits, std::span<const double> targets);
double mean_squared_error(const Tensor& predictions, std::span<const double> targets);

// Node handles into a graph built from a model.
struct ModelGraph {
  Graph graph;
  NodeId input = 0;
  NodeId target = 0;
  std::vector<NodeId> logits;  // every exit
  std::vector<NodeId> losses;  // every exit
  NodeId total = 0;
  std::vector<std::size_t> loss_exits;  // exits with non-zero weight in `total`
};

struct GraphOptions {
  std::vector<double> alpha;  // length K; zero weights drop the exit from the total
  std::vector<bool> detach_heads;  // per exit; empty means none
};

inline const std::string kInputLeaf = "input";
inline const std::string kTargetLeaf = "target";

ModelGraph build_graph(const MultiExitModel& model, const GraphOptions& options);
// Binds parameters plus input/target. Targets are an n×1 column.
Bindings bind_model(const MultiExitModel& model, const Tensor& input, const Tensor& targets);
Tensor targets_column(std::span<const double> targets);

struct CostModel {
  std::vector<double> block_flops;
  std::vector<double> head_flops;
  std::vector<std::size_t> placements;
  double backbone_cost = 0.0;

  std::size_t num_exits() const { return head_flops.size(); }
};

double dense_flops(std::size_t in, std::size_t out);
CostModel cost_model(const MultiExitModel& model);
// Cost of reaching exit k (0-based) while evaluating every earlier head.
double exit_cost(const CostModel& cost, std::size_t exit);

}  // namespace exitlab
