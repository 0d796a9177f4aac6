#pragma once

#include <cstdint>
#include <string>

#include "exitlab/analysis/analysis.hpp"
#include "exitlab/inference/inference.hpp"
#include "exitlab/regimes/regimes.hpp"
#include "exitlab/workbench/checkpoint.hpp"
#include "exitlab/workbench/config.hpp"
#include "exitlab/workbench/report.hpp"

namespace exitlab {

struct RunResult {
  MultiExitModel model;
  TrainLog log;
  GDTrace gd;
  BudgetReport budgets;
  std::vector<Budget> skipped_budgets;  // below the cheapest operating point
  CheckpointMeta meta;
  double wall_seconds = 0.0;
};

struct RunOptions {
  bool track_gd = true;
  bool calibrate = true;
};

// Loss weights of the configured scaling scheme for this model.
std::vector<double> configured_alpha(const RunConfig& config, const MultiExitModel& model);

// The first `size` training rows, used as the fixed GD probe batch.
Split probe_split(const Dataset& data, std::size_t size);

// Trains one seed of `config` on `data` and calibrates the exit policy.
RunResult run_training(const RunConfig& config, const Dataset& data, std::uint64_t seed, const RunOptions& options = {});

// Writes config.json, model.ckpt and CSV/SVG reports into `dir`.
void write_run(const RunResult& result, const RunConfig& config, const std::string& dir);

ReportContext report_context(const RunConfig& config, const CheckpointMeta& meta);

}  // namespace exitlab
