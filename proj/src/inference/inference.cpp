#include "exitlab/inference/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "exitlab/errors.hpp"

namespace exitlab {

namespace {

std::size_t argmax(std::span<const double> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

bool agrees(double a, double b, bool classification, double tolerance) {
  return classification ? a == b : std::abs(a - b) <= tolerance;
}

// Patience rule on a sequence of per-exit predictions: the first exit whose
// window of `patience` consecutive predictions (ending at it) all agree.
template <typename PredictionAt>
std::size_t patience_exit(PredictionAt prediction_at, std::size_t exits, const ExitPolicy& policy,
                          bool classification) {
  std::size_t run = 1;
  double prev = prediction_at(0);
  if (policy.patience <= 1) return 0;
  for (std::size_t k = 1; k < exits; ++k) {
    const double cur = prediction_at(k);
    run = agrees(prev, cur, classification, policy.agreement_tolerance) ? run + 1 : 1;
    if (run >= policy.patience) return k;
    prev = cur;
  }
  return exits - 1;
}

double std_dev(std::span<const double> v) {
  if (v.empty()) return 0.0;
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return std::sqrt(s / static_cast<double>(v.size()));
}

// True when `a` is a strictly better operating point than `b`.
bool better_point(const OperatingPoint& a, const OperatingPoint& b, bool higher_is_better) {
  if (a.metric != b.metric) return higher_is_better ? a.metric > b.metric : a.metric < b.metric;
  return a.mean_cost < b.mean_cost;
}

}  // namespace

std::string to_string(ExitCriterion criterion) {
  switch (criterion) {
    case ExitCriterion::kMaxProb: return "max_prob";
    case ExitCriterion::kNormEntropy: return "norm_entropy";
    case ExitCriterion::kPatience: return "patience";
  }
  return "unknown";
}

ExitCriterion parse_criterion(const std::string& name) {
  if (name == "max_prob") return ExitCriterion::kMaxProb;
  if (name == "norm_entropy" || name == "entropy") return ExitCriterion::kNormEntropy;
  if (name == "patience") return ExitCriterion::kPatience;
  throw ConfigError("unknown exit criterion '" + name + "'");
}

void ExitPolicy::validate(std::size_t exits) const {
  if (criterion == ExitCriterion::kPatience) {
    if (patience < 1 || patience > exits) throw InvalidArgument("patience must lie in [1, K]");
  } else if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw InvalidArgument("threshold must lie in [0, 1]");
  }
}

double confidence(std::span<const double> logits, ExitCriterion criterion, const Task& task) {
  if (criterion == ExitCriterion::kPatience) {
    throw InvalidArgument("unsupported criterion: patience has no per-exit confidence score");
  }
  if (!task.is_classification()) {
    throw InvalidArgument("unsupported criterion: " + to_string(criterion) + " needs a classification task");
  }
  const std::size_t c = logits.size();
  if (c < 2) throw InvalidArgument("confidence needs at least two classes");
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(c);
  double z = 0.0;
  for (std::size_t j = 0; j < c; ++j) {
    p[j] = std::exp(logits[j] - mx);
    z += p[j];
  }
  for (auto& v : p) v /= z;
  if (criterion == ExitCriterion::kMaxProb) return *std::max_element(p.begin(), p.end());
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return std::clamp(1.0 - h / std::log(static_cast<double>(c)), 0.0, 1.0);
}

std::size_t decide_exit(const ExitOutputFn& output_at, std::size_t exits, const ExitPolicy& policy,
                        const Task& task) {
  policy.validate(exits);
  if (policy.criterion == ExitCriterion::kPatience) {
    auto prediction_at = [&](std::size_t k) {
      auto row = output_at(k);
      return task.is_classification() ? static_cast<double>(argmax(row)) : row[0];
    };
    return patience_exit(prediction_at, exits, policy, task.is_classification());
  }
  for (std::size_t k = 0; k < exits; ++k) {
    if (confidence(output_at(k), policy.criterion, task) >= policy.threshold) return k;
  }
  return exits - 1;
}

ExitTrace trace_from_logits(const std::vector<Tensor>& logits, std::span<const double> targets,
                            const Task& task, ExitCriterion criterion) {
  ExitTrace trace;
  trace.exits = logits.size();
  trace.samples = targets.size();
  trace.classification = task.is_classification();
  trace.targets.assign(targets.begin(), targets.end());
  trace.prediction.resize(trace.samples * trace.exits);
  const bool scored = criterion != ExitCriterion::kPatience;
  if (scored) trace.confidence.resize(trace.samples * trace.exits);
  for (std::size_t k = 0; k < trace.exits; ++k) {
    if (logits[k].rows() != trace.samples) throw ShapeError("logit rows differ from target count");
    for (std::size_t i = 0; i < trace.samples; ++i) {
      auto row = logits[k].row(i);
      trace.prediction[i * trace.exits + k] = task.is_classification() ? static_cast<double>(argmax(row)) : row[0];
      if (scored) trace.confidence[i * trace.exits + k] = confidence(row, criterion, task);
    }
  }
  return trace;
}

ExitTrace trace_exits(const MultiExitModel& model, const Split& split, ExitCriterion criterion) {
  return trace_from_logits(forward_all(model, split.features).logits, split.targets, model.task(), criterion);
}

std::size_t decide_exit(const ExitTrace& trace, std::size_t sample, const ExitPolicy& policy) {
  if (policy.criterion == ExitCriterion::kPatience) {
    return patience_exit([&](std::size_t k) { return trace.prediction_at(sample, k); }, trace.exits, policy,
                         trace.classification);
  }
  if (trace.confidence.empty()) throw InvalidArgument("trace carries no confidence scores");
  for (std::size_t k = 0; k < trace.exits; ++k) {
    if (trace.confidence_at(sample, k) >= policy.threshold) return k;
  }
  return trace.exits - 1;
}

OperatingPoint evaluate_operating_point(const ExitTrace& trace, const ExitPolicy& policy,
                                        const CostModel& cost) {
  if (trace.samples == 0) throw InvalidArgument("operating point needs a non-empty dataset");
  if (cost.num_exits() != trace.exits) throw InvalidArgument("cost model exit count differs from trace");
  policy.validate(trace.exits);
  std::vector<double> exit_fraction(trace.exits);
  for (std::size_t k = 0; k < trace.exits; ++k) exit_fraction[k] = exit_cost(cost, k) / cost.backbone_cost;

  OperatingPoint point;
  point.parameter = policy.parameter();
  point.histogram.assign(trace.exits, 0);
  double metric_sum = 0.0;
  for (std::size_t i = 0; i < trace.samples; ++i) {
    const std::size_t k = decide_exit(trace, i, policy);
    ++point.histogram[k];
    const double pred = trace.prediction_at(i, k);
    if (trace.classification) {
      metric_sum += pred == trace.targets[i] ? 1.0 : 0.0;
    } else {
      metric_sum += (pred - trace.targets[i]) * (pred - trace.targets[i]);
    }
  }
  const auto n = static_cast<double>(trace.samples);
  // Weighting exit fractions by their share keeps the all-at-one-exit case
  // exact: share 1 times the fraction.
  for (std::size_t k = 0; k < trace.exits; ++k) {
    if (point.histogram[k] > 0) point.mean_cost += static_cast<double>(point.histogram[k]) / n * exit_fraction[k];
  }
  point.metric = metric_sum / n;
  return point;
}

OperatingPoint evaluate_operating_point(const MultiExitModel& model, const ExitPolicy& policy,
                                        const Split& split, const CostModel& cost) {
  return evaluate_operating_point(trace_exits(model, split, policy.criterion), policy, cost);
}

std::vector<Budget> default_budgets() { return {0.25, 0.5, 0.75, 1.0, std::nullopt}; }

std::string budget_label(const Budget& budget) {
  if (!budget) return "unlimited";
  const double pct = *budget * 100.0;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g%%", pct);
  return buf;
}

std::vector<ExitPolicy> policy_grid(ExitCriterion criterion, std::size_t exits, double agreement_tolerance) {
  std::vector<ExitPolicy> grid;
  if (criterion == ExitCriterion::kPatience) {
    for (std::size_t t = 1; t <= exits; ++t) grid.push_back({criterion, 0.0, t, agreement_tolerance});
  } else {
    for (int i = 0; i <= 200; ++i) grid.push_back({criterion, static_cast<double>(i) / 200.0, 1, 0.0});
  }
  return grid;
}

double floor_cost(const CostModel& cost) { return exit_cost(cost, 0) / cost.backbone_cost; }

std::vector<Budget> feasible_budgets(const std::vector<Budget>& budgets, const CostModel& cost,
                                     std::vector<Budget>* dropped) {
  const double floor = floor_cost(cost);
  std::vector<Budget> kept;
  for (const auto& b : budgets) {
    if (!b || *b >= floor) {
      kept.push_back(b);
    } else if (dropped) {
      dropped->push_back(b);
    }
  }
  return kept;
}

BudgetReport calibrate_budgets(const ExitTrace& val, const ExitTrace& test, ExitCriterion criterion,
                               const std::vector<Budget>& budgets, const CostModel& cost,
                               double agreement_tolerance) {
  BudgetReport report;
  report.criterion = criterion;
  report.higher_is_better = val.classification;
  const auto grid = policy_grid(criterion, val.exits, agreement_tolerance);
  for (const auto& policy : grid) {
    report.val_sweep.push_back(evaluate_operating_point(val, policy, cost));
    report.test_sweep.push_back(evaluate_operating_point(test, policy, cost));
  }
  const double floor = floor_cost(cost);

  for (const auto& budget : budgets) {
    if (budget && !(*budget > 0.0)) throw InvalidArgument("budgets must be positive fractions");
    std::optional<std::size_t> chosen;
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const auto& p = report.val_sweep[i];
      // Mean costs are averages of a handful of fractions; allow rounding slack.
      if (budget && p.mean_cost > *budget * (1.0 + 1e-12)) continue;
      if (!chosen || better_point(p, report.val_sweep[*chosen], report.higher_is_better)) chosen = i;
    }
    if (!chosen) {
      throw InfeasibleBudgetError("budget " + budget_label(budget) + " is below the cheapest operating point (" +
                                  std::to_string(floor) + " of backbone cost)");
    }
    const auto& v = report.val_sweep[*chosen];
    const auto& t = report.test_sweep[*chosen];
    report.rows.push_back({budget, v.parameter, v.mean_cost, v.metric, t.mean_cost, t.metric});
  }
  return report;
}

BudgetReport calibrate_budgets(const MultiExitModel& model, ExitCriterion criterion, const Dataset& data,
                               const std::vector<Budget>& budgets, const CostModel& cost) {
  const double tolerance = model.task().is_classification() ? 0.0 : 0.1 * std_dev(data.train.targets);
  return calibrate_budgets(trace_exits(model, data.val, criterion), trace_exits(model, data.test, criterion),
                           criterion, budgets, cost, tolerance);
}

}  // namespace exitlab
