#include "exitlab/workbench/runner.hpp"

#include <chrono>
#include <filesystem>

namespace exitlab {

std::vector<double> configured_alpha(const RunConfig& config, const MultiExitModel& model) {
  return loss_weights(config.regime.scaling, model.num_exits(), cost_model(model));
}

Split probe_split(const Dataset& data, std::size_t size) {
  const std::size_t n = std::min(size, data.train.size());
  std::vector<std::size_t> rows(n);
  for (std::size_t i = 0; i < n; ++i) rows[i] = i;
  Split probe;
  probe.features = gather_rows(data.train.features, rows);
  probe.targets.assign(data.train.targets.begin(), data.train.targets.begin() + static_cast<std::ptrdiff_t>(n));
  return probe;
}

RunResult run_training(const RunConfig& config, const Dataset& data, std::uint64_t seed, const RunOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  RegimeSpec spec = config.regime;
  spec.train.seed = seed;
  RunResult result{build_model(make_model_config(config, data, seed)), {}, {}, {}, {}, {}, 0.0};
  const auto alpha = configured_alpha(config, result.model);
  const Split probe = probe_split(data, config.analysis.probe_size);

  EpochHook hook;
  if (options.track_gd) {
    hook = [&](const MultiExitModel& model, const EpochRecord& record) {
      if (record.epoch % config.analysis.gd_every != 0) return;
      result.gd.append(record.epoch, gradient_dominance(model, probe.features, probe.targets, alpha).gd);
    };
  }
  result.log = run_regime(spec, result.model, data, hook);
  if (options.calibrate) {
    const CostModel cost = cost_model(result.model);
    const auto budgets = feasible_budgets(config.policy.budgets, cost, &result.skipped_budgets);
    if (!budgets.empty()) result.budgets = calibrate_budgets(result.model, config.policy.criterion, data, budgets, cost);
  }
  result.meta = {to_string(spec.kind), to_string(spec.scaling), seed, data.provenance, to_json(config).dump()};
  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

ReportContext report_context(const RunConfig& config, const CheckpointMeta& meta) {
  return {to_json(config).dump(),
          {"regime: " + meta.regime, "alpha scheme: " + meta.scaling, "seed: " + std::to_string(meta.seed),
           "dataset: " + meta.dataset}};
}

void write_run(const RunResult& result, const RunConfig& config, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const ReportContext ctx = report_context(config, result.meta);
  write_text_file((fs::path(dir) / "config.json").string(), to_json(config).dump(2) + "\n");
  save_checkpoint(result.model, result.meta, (fs::path(dir) / "model.ckpt").string());
  const auto out = [&](const char* name) { return (fs::path(dir) / name).string(); };
  emit_report(result.log, ReportFormat::kCsv, out("train_log.csv"), ctx);
  emit_report(result.log, ReportFormat::kSvg, out("train_log.svg"), ctx);
  if (!result.gd.values.empty()) {
    emit_report(result.gd, ReportFormat::kCsv, out("gd.csv"), ctx);
    emit_report(result.gd, ReportFormat::kSvg, out("gd.svg"), ctx);
  }
  if (!result.budgets.rows.empty()) {
    emit_report(result.budgets, ReportFormat::kCsv, out("budgets.csv"), ctx);
    emit_report(result.budgets, ReportFormat::kSvg, out("budgets.svg"), ctx);
  }
}

}  // namespace exitlab
