// exitlab command-line front end: train, evaluate, analyze, sweep, gen-data.
// Exit codes: 0 success, 2 configuration error, 3 compute error.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <sstream>

#include "exitlab/common/parallel.hpp"
#include "exitlab/errors.hpp"
#include "exitlab/workbench/runner.hpp"

namespace fs = std::filesystem;
using namespace exitlab;

namespace {

constexpr int kConfigExit = 2;
constexpr int kComputeExit = 3;

std::vector<Budget> parse_budgets(const std::string& text) {
  std::vector<Budget> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item == "unlimited") {
      out.push_back(std::nullopt);
      continue;
    }
    try {
      std::size_t used = 0;
      const double pct = std::stod(item, &used);
      if (used != item.size() || !(pct > 0.0 && pct <= 100.0)) throw std::invalid_argument(item);
      out.push_back(pct / 100.0);
    } catch (const std::exception&) {
      throw ConfigError("budgets are percentages in (0, 100] or 'unlimited', got '" + item + "'");
    }
  }
  if (out.empty()) throw ConfigError("no budgets given");
  return out;
}

RunConfig config_of(const Checkpoint& ckpt, const std::string& override_path) {
  if (!override_path.empty()) return load_run_config(override_path);
  if (ckpt.meta.run_config.empty()) throw ConfigError("checkpoint carries no run config; pass --config");
  try {
    return parse_run_config(Json::parse(ckpt.meta.run_config));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("checkpoint run config is not valid JSON: ") + e.what());
  }
}

std::string run_dir(const RunConfig& config, std::uint64_t seed) {
  return (fs::path(config.output) / (to_string(config.regime.kind) + "-" + to_string(config.regime.scaling) +
                                     "-seed" + std::to_string(seed)))
      .string();
}

void warn_skipped(const std::vector<Budget>& skipped, const CostModel& cost) {
  for (const auto& b : skipped) {
    std::cerr << "warning: skipping budget " << budget_label(b) << ", below the cheapest operating point ("
              << budget_label(floor_cost(cost)) << ")\n";
  }
}

void print_budgets(const BudgetReport& report) {
  std::cout << "criterion " << to_string(report.criterion) << "\n";
  for (const auto& r : report.rows) {
    std::printf("  %-10s parameter=%-8.4g val_cost=%.4f test_cost=%.4f test_metric=%.4f\n",
                budget_label(r.budget).c_str(), r.parameter, r.val_cost, r.test_cost, r.test_metric);
  }
}

int cmd_train(const std::string& config_path, const std::string& regime, std::optional<std::uint64_t> seed,
              const std::string& out) {
  RunConfig config = load_run_config(config_path);
  if (!regime.empty()) config.regime.kind = parse_regime(regime);
  if (!out.empty()) config.output = out;
  if (seed) config.seeds = {*seed};
  config.validate();
  const Dataset data = make_dataset(config.dataset);
  for (std::uint64_t s : config.seeds) {
    const RunResult result = run_training(config, data, s);
    const std::string dir = run_dir(config, s);
    warn_skipped(result.skipped_budgets, cost_model(result.model));
    write_run(result, config, dir);
    std::cout << "trained " << to_string(config.regime.kind) << " seed " << s << " in " << result.wall_seconds
              << " s -> " << dir << "\n";
    print_budgets(result.budgets);
  }
  return 0;
}

int cmd_evaluate(const std::string& checkpoint, const std::string& config_path, const std::string& criterion,
                 const std::string& budgets, const std::string& out) {
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  RunConfig config = config_of(ckpt, config_path);
  if (!criterion.empty()) config.policy.criterion = parse_criterion(criterion);
  const CostModel cost = cost_model(ckpt.model);
  // Explicit budgets are calibrated strictly; configured ones skip what the
  // model cannot reach.
  if (budgets.empty()) {
    std::vector<Budget> skipped;
    config.policy.budgets = feasible_budgets(config.policy.budgets, cost, &skipped);
    warn_skipped(skipped, cost);
  } else {
    config.policy.budgets = parse_budgets(budgets);
  }
  const Dataset data = make_dataset(config.dataset);
  const BudgetReport report = calibrate_budgets(ckpt.model, config.policy.criterion, data, config.policy.budgets, cost);
  print_budgets(report);
  if (!out.empty()) {
    fs::create_directories(out);
    const ReportContext ctx = report_context(config, ckpt.meta);
    const std::string stem = "budgets-" + to_string(config.policy.criterion);
    emit_report(report, ReportFormat::kCsv, (fs::path(out) / (stem + ".csv")).string(), ctx);
    emit_report(report, ReportFormat::kSvg, (fs::path(out) / (stem + ".svg")).string(), ctx);
  }
  return 0;
}

int cmd_analyze(const std::string& instrument, const std::vector<std::string>& checkpoints,
                const std::string& config_path, const std::string& out) {
  if (checkpoints.empty()) throw ConfigError("--checkpoint is required");
  std::vector<Checkpoint> ckpts;
  for (const auto& path : checkpoints) ckpts.push_back(load_checkpoint(path));
  const RunConfig config = config_of(ckpts.front(), config_path);
  const Dataset data = make_dataset(config.dataset);
  const MultiExitModel& model = ckpts.front().model;
  const auto alpha = configured_alpha(config, model);
  const Split probe = probe_split(data, config.analysis.probe_size);
  const ReportContext ctx = report_context(config, ckpts.front().meta);
  fs::create_directories(out);
  const auto emit_both = [&](const auto& record) {
    emit_report(record, ReportFormat::kCsv, (fs::path(out) / (instrument + ".csv")).string(), ctx);
    emit_report(record, ReportFormat::kSvg, (fs::path(out) / (instrument + ".svg")).string(), ctx);
  };
  auto need = [&](std::size_t n) {
    if (ckpts.size() != n) {
      throw ConfigError("instrument '" + instrument + "' needs " + std::to_string(n) + " checkpoints");
    }
  };

  if (instrument == "gd") {
    GDTrace trace;
    for (std::size_t i = 0; i < ckpts.size(); ++i) {
      trace.append(i, gradient_dominance(ckpts[i].model, probe.features, probe.targets, alpha).gd);
    }
    emit_both(trace);
  } else if (instrument == "rank") {
    need(1);
    emit_both(rank_profile(model, probe.features, config.analysis.rank_tol));
  } else if (instrument == "mi") {
    need(1);
    emit_both(mi_profile(model, probe.features, config.analysis.mi_bins));
  } else if (instrument == "path") {
    need(2);
    const MatchResult match = weight_match(model, ckpts[1].model, config.seeds.front());
    std::vector<double> lambdas;
    for (std::size_t i = 0; i < config.analysis.path_points; ++i) {
      lambdas.push_back(static_cast<double>(i) / static_cast<double>(config.analysis.path_points - 1));
    }
    std::cout << "weight matching: distance " << match.distance_before << " -> " << match.distance_after << "\n";
    emit_both(interpolate_loss(model, ckpts[1].model, match.permutation, lambdas, data.test, alpha));
  } else if (instrument == "plane") {
    need(3);
    emit_both(plane_loss(model, ckpts[1].model, ckpts[2].model, config.analysis.plane_resolution, data.test, alpha,
                         config.seeds.front()));
  } else if (instrument == "landscape") {
    need(1);
    emit_both(loss_landscape(model, data.test, config.analysis.landscape_resolution, config.seeds.front(), alpha));
  } else {
    throw ConfigError("unknown instrument '" + instrument + "'");
  }
  std::cout << "wrote " << (fs::path(out) / instrument).string() << ".{csv,svg}\n";
  return 0;
}

int cmd_sweep(const std::vector<std::string>& configs, const std::vector<std::uint64_t>& seeds, std::size_t jobs) {
  struct Job {
    RunConfig config;
    std::size_t dataset;
    std::uint64_t seed;
  };
  std::vector<Dataset> datasets;
  std::vector<Job> queue;
  for (const auto& path : configs) {
    RunConfig c = load_run_config(path);
    if (!seeds.empty()) c.seeds = seeds;
    datasets.push_back(make_dataset(c.dataset));
    for (auto s : c.seeds) queue.push_back({c, datasets.size() - 1, s});
  }
  std::vector<std::string> summaries(queue.size());
  parallel_for(
      queue.size(),
      [&](std::size_t i) {
        const Job& job = queue[i];
        const RunResult result = run_training(job.config, datasets[job.dataset], job.seed);
        write_run(result, job.config, run_dir(job.config, job.seed));
        std::ostringstream row;
        for (const auto& r : result.budgets.rows) {
          row << to_string(job.config.regime.kind) << "," << to_string(job.config.regime.scaling) << "," << job.seed
              << "," << budget_label(r.budget) << "," << r.parameter << "," << r.val_cost << "," << r.test_cost << ","
              << r.test_metric << "\n";
        }
        summaries[i] = row.str();
      },
      jobs == 0 ? worker_count() : std::min(jobs, worker_count()));
  std::string csv = "regime,scaling,seed,budget,parameter,val_cost,test_cost,test_metric\n";
  for (const auto& s : summaries) csv += s;
  const fs::path root = queue.empty() ? fs::path(".") : fs::path(queue.front().config.output);
  fs::create_directories(root);
  write_text_file((root / "sweep_summary.csv").string(), csv);
  std::cout << csv;
  return 0;
}

int cmd_gen_data(const std::string& kind, std::size_t samples, std::size_t dim, std::size_t classes, double noise,
                 std::uint64_t seed, const std::string& out) {
  SyntheticSpec spec;
  spec.kind = parse_synthetic_kind(kind);
  spec.samples = samples;
  spec.dim = dim;
  spec.classes = classes;
  spec.noise = noise;
  spec.seed = seed;
  const Dataset data = generate_synthetic(spec);
  std::ostringstream csv;
  csv.precision(17);
  for (std::size_t j = 0; j < dim; ++j) csv << "x" << j + 1 << ",";
  csv << "label\n";
  for (const Split* s : {&data.train, &data.val, &data.test}) {
    for (std::size_t i = 0; i < s->size(); ++i) {
      for (double v : s->features.row(i)) csv << v << ",";
      csv << s->targets[i] << "\n";
    }
  }
  write_text_file(out, csv.str());
  std::cout << "wrote " << samples << " samples (" << data.provenance << ") to " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"exitlab: multi-exit network training and analysis workbench"};
  app.require_subcommand(1);

  std::string config_path, regime, out, analysis_out = "analysis", checkpoint, criterion, budgets, instrument = "rank", kind = "tiered-blobs";
  std::optional<std::uint64_t> seed;
  std::vector<std::string> checkpoints, configs;
  std::vector<std::uint64_t> seeds;
  std::size_t jobs = 0, samples = 3000, dim = 8, classes = 4;
  double noise = 0.5;
  std::uint64_t data_seed = 0;

  auto* train = app.add_subcommand("train", "Train one run per seed and calibrate exit budgets");
  train->add_option("--config", config_path, "Run config (JSON)")->required();
  train->add_option("--regime", regime, "Override the configured regime");
  train->add_option("--seed", seed, "Train only this seed");
  train->add_option("--out", out, "Override the output directory");

  auto* evaluate = app.add_subcommand("evaluate", "Budget table for a trained checkpoint");
  evaluate->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  evaluate->add_option("--config", config_path, "Run config (defaults to the one stored in the checkpoint)");
  evaluate->add_option("--criterion", criterion, "max_prob | norm_entropy | patience");
  evaluate->add_option("--budgets", budgets, "Comma list, e.g. 25,50,75,100,unlimited");
  evaluate->add_option("--out", out, "Directory for CSV/SVG output");

  auto* analyze = app.add_subcommand("analyze", "Run an analysis instrument on checkpoints");
  analyze->add_option("--instrument", instrument, "gd | rank | mi | path | plane | landscape")->required();
  analyze->add_option("--checkpoint,--checkpoints", checkpoints, "Checkpoint file(s)")->required();
  analyze->add_option("--config", config_path, "Run config (defaults to the first checkpoint's)");
  analyze->add_option("--out", analysis_out, "Output directory")->capture_default_str();

  auto* sweep = app.add_subcommand("sweep", "Train every config x seed on a worker pool");
  sweep->add_option("--configs", configs, "Run configs")->required();
  sweep->add_option("--seeds", seeds, "Seeds (default: each config's own)");
  sweep->add_option("--jobs", jobs, "Parallel jobs (capped by MX_THREADS)");

  auto* gen = app.add_subcommand("gen-data", "Write a synthetic dataset as CSV");
  gen->add_option("--kind", kind, "spirals | tiered-blobs");
  gen->add_option("--samples", samples);
  gen->add_option("--dim", dim);
  gen->add_option("--classes", classes);
  gen->add_option("--noise", noise);
  gen->add_option("--seed", data_seed);
  gen->add_option("--out", out, "Output CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigExit;
  }

  try {
    if (*train) return cmd_train(config_path, regime, seed, out);
    if (*evaluate) return cmd_evaluate(checkpoint, config_path, criterion, budgets, out);
    if (*analyze) return cmd_analyze(instrument, checkpoints, config_path, analysis_out);
    if (*sweep) return cmd_sweep(configs, seeds, jobs);
    if (*gen) return cmd_gen_data(kind, samples, dim, classes, noise, data_seed, out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigExit;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kComputeExit;
  }
  return 0;
}
