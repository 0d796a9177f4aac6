#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "exitlab/common/dataset.hpp"
#include "exitlab/multiexit/model.hpp"

namespace exitlab {

enum class ExitCriterion { kMaxProb, kNormEntropy, kPatience };

std::string to_string(ExitCriterion criterion);
ExitCriterion parse_criterion(const std::string& name);

struct ExitPolicy {
  ExitCriterion criterion = ExitCriterion::kMaxProb;
  double threshold = 0.5;           // max_prob / norm_entropy
  std::size_t patience = 1;         // patience criterion
  double agreement_tolerance = 0.0;  // regression patience: |Δ| allowed between exits

  void validate(std::size_t exits) const;
  double parameter() const {
    return criterion == ExitCriterion::kPatience ? static_cast<double>(patience) : threshold;
  }
};

// max_prob: largest softmax probability. norm_entropy: 1 - H(p)/log C.
double confidence(std::span<const double> logits, ExitCriterion criterion, const Task& task);

// Exit outputs are requested lazily in exit order; returns the 0-based exit.
using ExitOutputFn = std::function<std::span<const double>(std::size_t exit)>;
std::size_t decide_exit(const ExitOutputFn& output_at, std::size_t exits, const ExitPolicy& policy,
                        const Task& task);

// Per-sample, per-exit summaries of a model's outputs, enough to replay any
// policy of one criterion without touching the network again.
struct ExitTrace {
  std::size_t samples = 0;
  std::size_t exits = 0;
  bool classification = true;
  std::vector<double> confidence;  // samples × exits; empty for patience
  std::vector<double> prediction;  // samples × exits; class id or regressed value
  std::vector<double> targets;

  double confidence_at(std::size_t i, std::size_t k) const { return confidence[i * exits + k]; }
  double prediction_at(std::size_t i, std::size_t k) const { return prediction[i * exits + k]; }
};

ExitTrace trace_from_logits(const std::vector<Tensor>& logits, std::span<const double> targets,
                            const Task& task, ExitCriterion criterion);
ExitTrace trace_exits(const MultiExitModel& model, const Split& split, ExitCriterion criterion);

std::size_t decide_exit(const ExitTrace& trace, std::size_t sample, const ExitPolicy& policy);

struct OperatingPoint {
  double parameter = 0.0;
  double mean_cost = 0.0;  // fraction of backbone_cost
  double metric = 0.0;     // accuracy or MSE
  std::vector<std::size_t> histogram;
};

OperatingPoint evaluate_operating_point(const ExitTrace& trace, const ExitPolicy& policy,
                                        const CostModel& cost);
OperatingPoint evaluate_operating_point(const MultiExitModel& model, const ExitPolicy& policy,
                                        const Split& split, const CostModel& cost);

// Budgets are fractions of backbone_cost; nullopt is the Unlimited column.
using Budget = std::optional<double>;

std::vector<Budget> default_budgets();
std::string budget_label(const Budget& budget);

struct BudgetRow {
  Budget budget;
  double parameter = 0.0;
  double val_cost = 0.0;
  double val_metric = 0.0;
  double test_cost = 0.0;
  double test_metric = 0.0;
};

struct BudgetReport {
  ExitCriterion criterion = ExitCriterion::kMaxProb;
  bool higher_is_better = true;
  std::vector<BudgetRow> rows;
  std::vector<OperatingPoint> val_sweep;
  std::vector<OperatingPoint> test_sweep;
};

// Cost of the cheapest operating point, exit_cost(first)/backbone_cost. Every
// budget at or above it is feasible.
double floor_cost(const CostModel& cost);
// Budgets that can be met; the rest are appended to `dropped` when given.
std::vector<Budget> feasible_budgets(const std::vector<Budget>& budgets, const CostModel& cost,
                                     std::vector<Budget>* dropped = nullptr);

// The parameter grid swept during calibration: 201 thresholds in [0, 1] or
// patience 1..K.
std::vector<ExitPolicy> policy_grid(ExitCriterion criterion, std::size_t exits, double agreement_tolerance);

BudgetReport calibrate_budgets(const ExitTrace& val, const ExitTrace& test, ExitCriterion criterion,
                               const std::vector<Budget>& budgets, const CostModel& cost,
                               double agreement_tolerance = 0.0);
// Calibrates on data.val, reports on data.test. Regression agreement
// tolerance is 0.1 × the standard deviation of the training targets.
BudgetReport calibrate_budgets(const MultiExitModel& model, ExitCriterion criterion, const Dataset& data,
                               const std::vector<Budget>& budgets, const CostModel& cost);

}  // namespace exitlab
