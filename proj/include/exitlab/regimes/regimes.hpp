#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "exitlab/common/dataset.hpp"
#include "exitlab/multiexit/model.hpp"
#include "exitlab/numerics/optim.hpp"

namespace exitlab {

enum class RegimeKind {
  kDisjoint,
  kJoint,
  kMixed,
  kBranchWise,
  kSeparate,
  kAlternating,
  kMixedGradual,
};

enum class LossScaling { kUniform, kInc, kDec, kSdn, kGe };

std::string to_string(RegimeKind kind);
std::string to_string(LossScaling scaling);
RegimeKind parse_regime(const std::string& name);
LossScaling parse_scaling(const std::string& name);

struct TrainConfig {
  std::size_t batch_size = 64;
  AdamWConfig adamw{};
  double max_lr = 1e-3;
  double min_lr = 1e-5;
  std::size_t restart_epochs = 10;   // first restart period T_0, in epochs
  std::uint64_t restart_mult = 2;    // T_mult
  std::size_t max_epochs = 100;      // budget for every phase
  std::size_t patience = 10;         // early-stopping n
  std::uint64_t seed = 0;

  void validate() const;
};

struct RegimeSpec {
  RegimeKind kind = RegimeKind::kMixed;
  LossScaling scaling = LossScaling::kUniform;
  TrainConfig train{};

  void validate() const;
};

// ---------------------------------------------------------------------------
// Early stopping: training continues while at least one monitored exit keeps
// improving on its own best score.

enum class MetricDirection { kHigherIsBetter, kLowerIsBetter };
enum class StopDecision { kContinue, kStop };

struct EarlyStopState {
  EarlyStopState(std::size_t exits, std::size_t patience, MetricDirection direction);

  std::vector<double> best;
  std::size_t since_improvement = 0;
  std::size_t patience;
  MetricDirection direction;
};

StopDecision early_stop_update(EarlyStopState& state, std::span<const double> metrics);

// ---------------------------------------------------------------------------

struct EpochRecord {
  std::size_t epoch = 0;
  std::size_t phase = 0;  // 1-based ordinal inside the regime
  std::string phase_name;
  double lr = 0.0;
  double train_loss = 0.0;
  std::vector<double> val_metric;  // one per exit
  double wall_seconds = 0.0;
};

struct PhaseSummary {
  std::string name;
  std::size_t epochs = 0;
  std::size_t steps = 0;
  std::size_t final_only_steps = 0;  // alternating bookkeeping
  std::size_t all_exit_steps = 0;
  bool early_stopped = false;
};

class TrainLog {
 public:
  void append(EpochRecord record);
  const std::vector<EpochRecord>& epochs() const { return epochs_; }
  std::vector<PhaseSummary>& phases() { return phases_; }
  const std::vector<PhaseSummary>& phases() const { return phases_; }
  std::size_t next_epoch() const { return epochs_.size(); }
  std::vector<std::string> phase_ids() const;

 private:
  std::vector<EpochRecord> epochs_;
  std::vector<PhaseSummary> phases_;
};

// ---------------------------------------------------------------------------
// Phase machinery.

struct Objective {
  std::vector<double> alpha;         // one weight per exit; zero drops the exit
  std::vector<bool> detach_heads;    // per exit, or empty
  bool gradient_equilibrium = false;
  std::vector<std::string> trainable;
};

struct PhasePlan {
  std::string name;
  Objective objective;
  // When set, optimizer steps alternate: even steps use `alternate`, odd
  // steps use `objective`.
  std::optional<Objective> alternate;
  std::vector<std::size_t> monitored;
};

struct PhaseOutcome {
  PhaseSummary summary;
  AdamWState optimizer;
};

using EpochHook = std::function<void(const MultiExitModel&, const EpochRecord&)>;

// Runs one phase with a fresh optimizer and a restarted LR schedule.
PhaseOutcome run_phase(MultiExitModel& model, const Dataset& data, const PhasePlan& plan,
                       const TrainConfig& config, TrainLog& log, const EpochHook& hook = {});

// Phase 1: final exit only; backbone and final head trainable.
PhasePlan phase1_plan(const MultiExitModel& model);
// Phase 2: every exit weighted by alpha, everything trainable.
PhasePlan phase2_plan(const MultiExitModel& model, std::vector<double> alpha,
                      bool gradient_equilibrium = false, bool detach_non_final_heads = false);
// Phase 3: every exit weighted by alpha, only heads trainable.
PhasePlan phase3_plan(const MultiExitModel& model, std::vector<double> alpha);

PhaseOutcome run_phase1(MultiExitModel& model, const Dataset& data, const TrainConfig& config,
                        TrainLog& log, const EpochHook& hook = {});
PhaseOutcome run_phase2(MultiExitModel& model, const Dataset& data, const TrainConfig& config,
                        std::vector<double> alpha, LossScaling scaling, TrainLog& log,
                        const EpochHook& hook = {}, bool detach_non_final_heads = false);
PhaseOutcome run_phase3(MultiExitModel& model, const Dataset& data, const TrainConfig& config,
                        std::vector<double> alpha, TrainLog& log, const EpochHook& hook = {});

// The ordered phase plans a regime expands to.
std::vector<PhasePlan> regime_plans(const RegimeSpec& spec, const MultiExitModel& model);

TrainLog run_regime(const RegimeSpec& spec, MultiExitModel& model, const Dataset& data,
                    const EpochHook& hook = {});

// ---------------------------------------------------------------------------

// uniform -> 1; inc -> ∝ k; dec -> ∝ K-k+1; sdn -> ∝ exit_cost(k)/backbone_cost.
// Normalised to sum K. `ge` resolves to uniform weights.
std::vector<double> loss_weights(LossScaling scheme, std::size_t exits, const CostModel& cost);

// Gradient equilibrium over backbone gradients: each block receives the mean
// of the gradients of the exits at or beyond it. `exit_placements[k]` is the
// 1-based block count of exit k; gradients are keyed by parameter name.
GradientMap ge_combine(const std::vector<GradientMap>& per_exit,
                       const std::vector<std::size_t>& exit_placements, std::size_t num_blocks);

// Per-exit validation metric: accuracy (classification) or MSE (regression).
std::vector<double> exit_metrics(const MultiExitModel& model, const Split& split);

}  // namespace exitlab
