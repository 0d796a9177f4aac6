#include "exitlab/regimes/regimes.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "exitlab/errors.hpp"
#include "exitlab/numerics/rng.hpp"

namespace exitlab {

namespace {

constexpr double kDivergenceThreshold = 1e6;

const std::vector<std::pair<RegimeKind, std::string>>& regime_names() {
  static const std::vector<std::pair<RegimeKind, std::string>> names = {
      {RegimeKind::kDisjoint, "disjoint"},       {RegimeKind::kJoint, "joint"},
      {RegimeKind::kMixed, "mixed"},             {RegimeKind::kBranchWise, "branch-wise"},
      {RegimeKind::kSeparate, "separate"},       {RegimeKind::kAlternating, "alternating"},
      {RegimeKind::kMixedGradual, "mixed-gradual"},
  };
  return names;
}

const std::vector<std::pair<LossScaling, std::string>>& scaling_names() {
  static const std::vector<std::pair<LossScaling, std::string>> names = {
      {LossScaling::kUniform, "uniform"}, {LossScaling::kInc, "inc"}, {LossScaling::kDec, "dec"},
      {LossScaling::kSdn, "sdn"},         {LossScaling::kGe, "ge"},
  };
  return names;
}

// Parses "backbone.<i>.<suffix>"; returns nullopt for head parameters.
std::optional<std::size_t> backbone_block_of(const std::string& name) {
  constexpr std::string_view prefix = "backbone.";
  if (name.rfind(prefix, 0) != 0) return std::nullopt;
  const auto dot = name.find('.', prefix.size());
  return static_cast<std::size_t>(std::stoul(name.substr(prefix.size(), dot - prefix.size())));
}

std::vector<std::string> concat_names(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

std::vector<double> one_hot(std::size_t size, std::size_t index) {
  std::vector<double> v(size, 0.0);
  v.at(index) = 1.0;
  return v;
}

// A graph compiled for one objective plus the parameter references it
// updates.
struct CompiledObjective {
  const Objective* objective = nullptr;
  ModelGraph graph;
  std::vector<ParamRef> trainable;
  std::vector<std::string> in_graph;
  std::vector<std::string> missing;
};

CompiledObjective compile(MultiExitModel& model, const Objective& objective) {
  CompiledObjective c;
  c.objective = &objective;
  c.graph = build_graph(model, GraphOptions{objective.alpha, objective.detach_heads});
  const std::set<std::string> wanted(objective.trainable.begin(), objective.trainable.end());
  for (auto& p : model.parameters()) {
    if (!wanted.contains(p.name)) continue;
    c.trainable.push_back(p);
    (c.graph.graph.has_leaf(p.name) ? c.in_graph : c.missing).push_back(p.name);
  }
  if (c.trainable.size() != wanted.size()) throw InvalidArgument("objective names unknown parameters");
  return c;
}

}  // namespace

std::string to_string(RegimeKind kind) {
  for (const auto& [k, n] : regime_names()) {
    if (k == kind) return n;
  }
  return "unknown";
}

std::string to_string(LossScaling scaling) {
  for (const auto& [k, n] : scaling_names()) {
    if (k == scaling) return n;
  }
  return "unknown";
}

RegimeKind parse_regime(const std::string& name) {
  for (const auto& [k, n] : regime_names()) {
    if (n == name) return k;
  }
  throw ConfigError("unknown regime '" + name + "'");
}

LossScaling parse_scaling(const std::string& name) {
  for (const auto& [k, n] : scaling_names()) {
    if (n == name) return k;
  }
  throw ConfigError("unknown loss scaling '" + name + "'");
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw InvalidArgument("batch_size must be positive");
  if (patience < 1) throw InvalidArgument("patience must be at least 1");
  if (max_epochs < 1) throw InvalidArgument("max_epochs must be at least 1");
  if (restart_epochs < 1 || restart_mult < 1) throw InvalidArgument("restart period must be >= 1");
  if (!(max_lr >= min_lr && min_lr >= 0.0)) throw InvalidArgument("need max_lr >= min_lr >= 0");
}

void RegimeSpec::validate() const { train.validate(); }

EarlyStopState::EarlyStopState(std::size_t exits, std::size_t patience_n, MetricDirection dir)
    : best(exits, dir == MetricDirection::kHigherIsBetter ? -std::numeric_limits<double>::infinity()
                                                          : std::numeric_limits<double>::infinity()),
      patience(patience_n),
      direction(dir) {
  if (patience < 1) throw InvalidArgument("patience must be at least 1");
}

StopDecision early_stop_update(EarlyStopState& state, std::span<const double> metrics) {
  if (metrics.size() != state.best.size()) {
    throw InvalidArgument("early stopping expects " + std::to_string(state.best.size()) + " metrics");
  }
  bool improved = false;
  for (std::size_t k = 0; k < metrics.size(); ++k) {
    const bool better = state.direction == MetricDirection::kHigherIsBetter ? metrics[k] > state.best[k]
                                                                            : metrics[k] < state.best[k];
    if (better) {
      state.best[k] = metrics[k];
      improved = true;
    }
  }
  state.since_improvement = improved ? 0 : state.since_improvement + 1;
  return state.since_improvement >= state.patience ? StopDecision::kStop : StopDecision::kContinue;
}

void TrainLog::append(EpochRecord record) {
  if (!epochs_.empty() && record.epoch <= epochs_.back().epoch) {
    throw InvalidArgument("train log epochs must be strictly increasing");
  }
  epochs_.push_back(std::move(record));
}

std::vector<std::string> TrainLog::phase_ids() const {
  std::vector<std::string> ids;
  for (const auto& e : epochs_) {
    if (std::find(ids.begin(), ids.end(), e.phase_name) == ids.end()) ids.push_back(e.phase_name);
  }
  return ids;
}

std::vector<double> loss_weights(LossScaling scheme, std::size_t exits, const CostModel& cost) {
  if (exits < 1) throw InvalidArgument("loss_weights needs K >= 1");
  std::vector<double> w(exits, 1.0);
  switch (scheme) {
    case LossScaling::kUniform:
    case LossScaling::kGe:
      return w;
    case LossScaling::kInc:
      for (std::size_t k = 0; k < exits; ++k) w[k] = static_cast<double>(k + 1);
      break;
    case LossScaling::kDec:
      for (std::size_t k = 0; k < exits; ++k) w[k] = static_cast<double>(exits - k);
      break;
    case LossScaling::kSdn:
      if (cost.num_exits() != exits) throw InvalidArgument("cost model exit count differs from K");
      for (std::size_t k = 0; k < exits; ++k) w[k] = exit_cost(cost, k) / cost.backbone_cost;
      break;
  }
  const double sum = std::accumulate(w.begin(), w.end(), 0.0);
  for (auto& v : w) v *= static_cast<double>(exits) / sum;
  return w;
}

GradientMap ge_combine(const std::vector<GradientMap>& per_exit,
                       const std::vector<std::size_t>& exit_placements, std::size_t num_blocks) {
  if (per_exit.empty() || per_exit.size() != exit_placements.size()) {
    throw InvalidArgument("ge_combine needs one placement per exit gradient");
  }
  for (const auto& g : per_exit) {
    if (g.size() != per_exit.front().size()) throw ShapeError("ge_combine: gradient layouts differ");
    for (const auto& [name, t] : g) {
      auto it = per_exit.front().find(name);
      if (it == per_exit.front().end() || !it->second.same_shape(t)) {
        throw ShapeError("ge_combine: gradient layouts differ at '" + name + "'");
      }
    }
  }
  GradientMap out;
  for (const auto& [name, ref] : per_exit.front()) {
    Tensor acc = Tensor::zeros_like(ref);
    const auto block = backbone_block_of(name);
    if (block && *block >= num_blocks) throw ShapeError("ge_combine: block index beyond topology");
    std::vector<std::size_t> contributors;
    for (std::size_t k = 0; k < per_exit.size(); ++k) {
      if (!block || exit_placements[k] >= *block + 1) contributors.push_back(k);
    }
    const double scale = block && !contributors.empty() ? 1.0 / static_cast<double>(contributors.size()) : 1.0;
    for (std::size_t k : contributors) {
      const Tensor& g = per_exit[k].at(name);
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += scale * g[i];
    }
    out.emplace(name, std::move(acc));
  }
  return out;
}

std::vector<double> exit_metrics(const MultiExitModel& model, const Split& split) {
  const auto outputs = forward_all(model, split.features);
  std::vector<double> metrics;
  for (const auto& logits : outputs.logits) {
    if (model.task().is_classification()) {
      std::size_t correct = 0;
      for (std::size_t i = 0; i < split.size(); ++i) {
        auto row = logits.row(i);
        const auto pred = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
        if (static_cast<double>(pred) == split.targets[i]) ++correct;
      }
      metrics.push_back(static_cast<double>(correct) / static_cast<double>(split.size()));
    } else {
      metrics.push_back(mean_squared_error(logits, split.targets));
    }
  }
  return metrics;
}

PhasePlan phase1_plan(const MultiExitModel& model) {
  const std::size_t K = model.num_exits();
  PhasePlan plan;
  plan.name = "phase1";
  plan.objective.alpha = one_hot(K, K - 1);
  plan.objective.trainable =
      concat_names(model.backbone_parameter_names(), model.head_parameter_names(K - 1));
  plan.monitored = {K - 1};
  return plan;
}

PhasePlan phase2_plan(const MultiExitModel& model, std::vector<double> alpha, bool gradient_equilibrium,
                      bool detach_non_final_heads) {
  const std::size_t K = model.num_exits();
  if (alpha.size() != K) throw InvalidArgument("alpha length differs from K");
  PhasePlan plan;
  plan.name = "phase2";
  plan.objective.alpha = std::move(alpha);
  plan.objective.gradient_equilibrium = gradient_equilibrium;
  if (detach_non_final_heads) {
    plan.objective.detach_heads.assign(K, true);
    plan.objective.detach_heads.back() = false;
  }
  plan.objective.trainable = model.parameter_names();
  plan.monitored.resize(K);
  std::iota(plan.monitored.begin(), plan.monitored.end(), std::size_t{0});
  return plan;
}

PhasePlan phase3_plan(const MultiExitModel& model, std::vector<double> alpha) {
  const std::size_t K = model.num_exits();
  if (alpha.size() != K) throw InvalidArgument("alpha length differs from K");
  PhasePlan plan;
  plan.name = "phase3";
  plan.objective.alpha = std::move(alpha);
  for (std::size_t k = 0; k < K; ++k) {
    plan.objective.trainable = concat_names(std::move(plan.objective.trainable), model.head_parameter_names(k));
  }
  plan.monitored.resize(K);
  std::iota(plan.monitored.begin(), plan.monitored.end(), std::size_t{0});
  return plan;
}

PhaseOutcome run_phase(MultiExitModel& model, const Dataset& data, const PhasePlan& plan,
                       const TrainConfig& config, TrainLog& log, const EpochHook& hook) {
  config.validate();
  const std::size_t n = data.train.size();
  if (n == 0) throw InvalidArgument("empty training split");
  if (plan.monitored.empty()) throw InvalidArgument("phase monitors no exits");

  std::vector<CompiledObjective> objectives;
  objectives.push_back(compile(model, plan.objective));
  if (plan.alternate) objectives.push_back(compile(model, *plan.alternate));

  std::vector<std::size_t> placements;
  for (std::size_t k = 0; k < model.num_exits(); ++k) placements.push_back(model.placement(k));

  PhaseOutcome outcome{PhaseSummary{plan.name}, AdamWState(config.adamw)};
  outcome.optimizer.register_params(model.parameters());
  auto& summary = outcome.summary;

  const std::size_t steps_per_epoch = (n + config.batch_size - 1) / config.batch_size;
  LrSchedule schedule{config.max_lr, config.min_lr, config.restart_epochs * steps_per_epoch,
                      config.restart_mult};
  schedule.validate();

  EarlyStopState stopper(plan.monitored.size(), config.patience,
                         model.task().is_classification() ? MetricDirection::kHigherIsBetter
                                                          : MetricDirection::kLowerIsBetter);
  const std::size_t phase_ordinal = log.phases().size() + 1;

  std::vector<std::size_t> order(n);
  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    const std::size_t global_epoch = log.next_epoch();

    std::iota(order.begin(), order.end(), std::size_t{0});
    CounterRng shuffle_rng(config.seed, "shuffle/" + std::to_string(global_epoch));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);

    double loss_sum = 0.0;
    double lr = 0.0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t end = std::min(n, start + config.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      const Tensor x = gather_rows(data.train.features, idx);
      std::vector<double> t(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) t[i] = data.train.targets[idx[i]];
      const Tensor y = targets_column(t);

      const bool use_alternate = plan.alternate && summary.steps % 2 == 0;
      CompiledObjective& obj = objectives[use_alternate ? 1 : 0];
      if (plan.alternate) ++(use_alternate ? summary.final_only_steps : summary.all_exit_steps);

      double loss = 0.0;
      try {
        loss = obj.graph.graph.forward(bind_model(model, x, y))[0];
      } catch (const NonFiniteError& e) {
        throw DivergenceError(plan.name + ": training diverged (" + e.what() + ")");
      }
      if (!std::isfinite(loss) || loss > kDivergenceThreshold) {
        throw DivergenceError(plan.name + ": training loss " + std::to_string(loss) + " diverged");
      }

      GradientMap grads;
      if (obj.objective->gradient_equilibrium) {
        std::vector<GradientMap> per_exit;
        std::vector<std::size_t> exit_placements;
        for (std::size_t k : obj.graph.loss_exits) {
          GradientMap g = obj.graph.graph.grad(obj.in_graph, obj.graph.losses[k]);
          for (auto& [name, tensor] : g) {
            for (auto& v : tensor.data()) v *= obj.objective->alpha[k];
          }
          per_exit.push_back(std::move(g));
          exit_placements.push_back(placements[k]);
        }
        grads = ge_combine(per_exit, exit_placements, model.num_blocks());
      } else {
        grads = obj.graph.graph.grad(obj.in_graph, obj.graph.total);
      }
      for (const auto& name : obj.missing) grads.emplace(name, Tensor::zeros_like(model.parameter(name)));

      lr = lr_at(schedule, summary.steps);
      try {
        adamw_step(outcome.optimizer, obj.trainable, grads, lr);
      } catch (const NonFiniteError& e) {
        throw DivergenceError(plan.name + ": " + e.what());
      }
      ++summary.steps;
      loss_sum += loss;
    }

    EpochRecord record;
    record.epoch = global_epoch;
    record.phase = phase_ordinal;
    record.phase_name = plan.name;
    record.lr = lr;
    record.train_loss = loss_sum / static_cast<double>(steps_per_epoch);
    record.val_metric = exit_metrics(model, data.val);
    record.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    log.append(record);
    ++summary.epochs;
    if (hook) hook(model, record);

    std::vector<double> watched;
    for (std::size_t k : plan.monitored) watched.push_back(record.val_metric.at(k));
    if (early_stop_update(stopper, watched) == StopDecision::kStop) {
      summary.early_stopped = true;
      break;
    }
  }
  log.phases().push_back(summary);
  return outcome;
}

PhaseOutcome run_phase1(MultiExitModel& model, const Dataset& data, const TrainConfig& config,
                        TrainLog& log, const EpochHook& hook) {
  return run_phase(model, data, phase1_plan(model), config, log, hook);
}

PhaseOutcome run_phase2(MultiExitModel& model, const Dataset& data, const TrainConfig& config,
                        std::vector<double> alpha, LossScaling scaling, TrainLog& log,
                        const EpochHook& hook, bool detach_non_final_heads) {
  return run_phase(model, data,
                   phase2_plan(model, std::move(alpha), scaling == LossScaling::kGe, detach_non_final_heads),
                   config, log, hook);
}

PhaseOutcome run_phase3(MultiExitModel& model, const Dataset& data, const TrainConfig& config,
                        std::vector<double> alpha, TrainLog& log, const EpochHook& hook) {
  return run_phase(model, data, phase3_plan(model, std::move(alpha)), config, log, hook);
}

std::vector<PhasePlan> regime_plans(const RegimeSpec& spec, const MultiExitModel& model) {
  spec.validate();
  const std::size_t K = model.num_exits();
  const auto alpha = loss_weights(spec.scaling, K, cost_model(model));
  const bool ge = spec.scaling == LossScaling::kGe;

  auto restricted = [&](std::size_t first, std::size_t last) {
    std::vector<double> a(K, 0.0);
    for (std::size_t k = first; k <= last; ++k) a[k] = alpha[k];
    return a;
  };
  auto range = [](std::size_t first, std::size_t last) {
    std::vector<std::size_t> r;
    for (std::size_t k = first; k <= last; ++k) r.push_back(k);
    return r;
  };

  std::vector<PhasePlan> plans;
  switch (spec.kind) {
    case RegimeKind::kDisjoint:
      plans.push_back(phase1_plan(model));
      plans.push_back(phase3_plan(model, alpha));
      break;
    case RegimeKind::kJoint:
      plans.push_back(phase2_plan(model, alpha, ge));
      break;
    case RegimeKind::kMixed:
      plans.push_back(phase1_plan(model));
      plans.push_back(phase2_plan(model, alpha, ge));
      break;
    case RegimeKind::kBranchWise:
      for (std::size_t k = 0; k < K; ++k) {
        PhasePlan p;
        p.name = "branch" + std::to_string(k + 1);
        p.objective.alpha = one_hot(K, k);
        const std::size_t first_block = k == 0 ? 0 : model.placement(k - 1);
        for (std::size_t b = first_block; b < model.placement(k); ++b) {
          p.objective.trainable = concat_names(std::move(p.objective.trainable), model.block_parameter_names(b));
        }
        p.objective.trainable = concat_names(std::move(p.objective.trainable), model.head_parameter_names(k));
        p.monitored = {k};
        plans.push_back(std::move(p));
      }
      break;
    case RegimeKind::kSeparate:
      for (std::size_t i = 0; i < K; ++i) {
        PhasePlan p;
        p.name = "separate" + std::to_string(i + 1);
        p.objective.alpha = restricted(0, i);
        p.objective.gradient_equilibrium = ge;
        p.objective.trainable = model.backbone_parameter_names();
        for (std::size_t k = 0; k <= i; ++k) {
          p.objective.trainable = concat_names(std::move(p.objective.trainable), model.head_parameter_names(k));
        }
        p.monitored = range(0, i);
        plans.push_back(std::move(p));
      }
      break;
    case RegimeKind::kAlternating: {
      PhasePlan p = phase2_plan(model, alpha, ge);
      p.name = "alternating";
      p.alternate = phase1_plan(model).objective;
      plans.push_back(std::move(p));
      break;
    }
    case RegimeKind::kMixedGradual:
      for (std::size_t i = 1; i <= K; ++i) {
        if (i == 1) {
          plans.push_back(phase1_plan(model));
          continue;
        }
        if (i == K) {
          plans.push_back(phase2_plan(model, alpha, ge));
          continue;
        }
        PhasePlan p;
        p.name = "gradual" + std::to_string(i);
        p.objective.alpha = restricted(K - i, K - 1);
        p.objective.gradient_equilibrium = ge;
        p.objective.trainable = model.backbone_parameter_names();
        for (std::size_t k = K - i; k < K; ++k) {
          p.objective.trainable = concat_names(std::move(p.objective.trainable), model.head_parameter_names(k));
        }
        p.monitored = range(K - i, K - 1);
        plans.push_back(std::move(p));
      }
      break;
  }
  return plans;
}

TrainLog run_regime(const RegimeSpec& spec, MultiExitModel& model, const Dataset& data,
                    const EpochHook& hook) {
  TrainLog log;
  for (const auto& plan : regime_plans(spec, model)) run_phase(model, data, plan, spec.train, log, hook);
  return log;
}

}  // namespace exitlab
