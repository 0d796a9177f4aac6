#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "exitlab/errors.hpp"
#include "exitlab/workbench/checkpoint.hpp"
#include "exitlab/workbench/config.hpp"
#include "exitlab/workbench/data.hpp"
#include "exitlab/workbench/report.hpp"
#include "exitlab/workbench/runner.hpp"
#include "support/test_support.hpp"

namespace exitlab {
namespace {

using testing::small_config;

SyntheticSpec blobs(std::size_t n, std::uint64_t seed, double noise = 0.5) {
  SyntheticSpec s;
  s.samples = n;
  s.dim = 4;
  s.classes = 3;
  s.noise = noise;
  s.seed = seed;
  return s;
}

TEST(SplitSizes, LargestRemainder) {
  EXPECT_EQ(split_sizes(10, kDefaultFractions), (std::array<std::size_t, 3>{7, 1, 2}));
  EXPECT_EQ(split_sizes(100, kDefaultFractions), (std::array<std::size_t, 3>{70, 15, 15}));
  for (std::size_t n = 3; n < 200; ++n) {
    const auto s = split_sizes(n, kDefaultFractions);
    EXPECT_EQ(s[0] + s[1] + s[2], n);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_LE(std::abs(static_cast<double>(s[i]) - kDefaultFractions[i] * n), 1.0);
  }
}

TEST(Synthetic, DeterministicAndSeedSensitive) {
  for (auto kind : {SyntheticKind::kTieredBlobs, SyntheticKind::kSpirals}) {
    SyntheticSpec s = blobs(200, 4);
    s.kind = kind;
    const auto a = generate_synthetic(s);
    const auto b = generate_synthetic(s);
    EXPECT_EQ(a.train.features, b.train.features);
    EXPECT_EQ(a.test.targets, b.test.targets);
    s.seed = 5;
    EXPECT_NE(generate_synthetic(s).train.features, a.train.features);
    EXPECT_EQ(a.train.size() + a.val.size() + a.test.size(), 200u);
    EXPECT_EQ(a.feature_dim(), 4u);
  }
  EXPECT_THROW(parse_synthetic_kind("moons"), ConfigError);
}

TEST(Synthetic, SplitsAreStratified) {
  const auto d = generate_synthetic(blobs(300, 1));
  for (const Split* s : {&d.train, &d.val, &d.test}) {
    std::map<double, std::size_t> counts;
    for (double y : s->targets) ++counts[y];
    ASSERT_EQ(counts.size(), 3u);
    for (const auto& [label, c] : counts) {
      EXPECT_LE(std::abs(static_cast<double>(c) - static_cast<double>(s->size()) / 3.0), 1.0) << label;
    }
  }
}

// Noise-free blobs sit inside their own Voronoi cell, so a linear softmax
// classifier separates them.
TEST(Synthetic, NoiseFreeBlobsAreLinearlySeparable) {
  const auto d = generate_synthetic(blobs(600, 2, 0.0));
  const Tensor& x = d.train.features;
  const std::size_t n = x.rows(), dim = x.cols(), c = 3;
  std::vector<double> w(dim * c, 0.0), b(c, 0.0);
  auto scores = [&](std::size_t i, std::vector<double>& z) {
    for (std::size_t k = 0; k < c; ++k) {
      z[k] = b[k];
      for (std::size_t j = 0; j < dim; ++j) z[k] += x.at(i, j) * w[j * c + k];
    }
  };
  std::vector<double> z(c);
  for (int iter = 0; iter < 2000; ++iter) {
    std::vector<double> gw(w.size(), 0.0), gb(c, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      scores(i, z);
      const double mx = *std::max_element(z.begin(), z.end());
      double s = 0.0;
      for (auto& v : z) s += v = std::exp(v - mx);
      for (std::size_t k = 0; k < c; ++k) {
        const double g = z[k] / s - (static_cast<double>(k) == d.train.targets[i] ? 1.0 : 0.0);
        gb[k] += g;
        for (std::size_t j = 0; j < dim; ++j) gw[j * c + k] += g * x.at(i, j);
      }
    }
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= 0.5 * gw[i] / static_cast<double>(n);
    for (std::size_t k = 0; k < c; ++k) b[k] -= 0.5 * gb[k] / static_cast<double>(n);
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    scores(i, z);
    correct += static_cast<double>(std::max_element(z.begin(), z.end()) - z.begin()) == d.train.targets[i];
  }
  EXPECT_GE(static_cast<double>(correct) / static_cast<double>(n), 0.97);
}

TEST(Csv, SplitStandardiseAndErrors) {
  std::string text = "a,b,label\n";
  for (int i = 0; i < 10; ++i) text += std::to_string(i) + "," + std::to_string(2 * i + 1) + "," + std::to_string(i % 2) + "\n";
  CsvOptions opts;
  opts.label_column = "label";
  const auto d = parse_csv_dataset(text, opts);
  EXPECT_EQ(d.train.size(), 7u);
  EXPECT_EQ(d.val.size(), 1u);
  EXPECT_EQ(d.test.size(), 2u);
  EXPECT_TRUE(d.task.is_classification());
  EXPECT_EQ(d.task.num_classes, 2u);
  EXPECT_EQ(d.feature_dim(), 2u);
  for (std::size_t j = 0; j < 2; ++j) {
    double mean = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < 7; ++i) mean += d.train.features.at(i, j) / 7.0;
    for (std::size_t i = 0; i < 7; ++i) sq += std::pow(d.train.features.at(i, j) - mean, 2) / 7.0;
    EXPECT_NEAR(mean, 0.0, 1e-12);
    EXPECT_NEAR(sq, 1.0, 1e-12);
  }

  opts.label_column = "missing";
  EXPECT_THROW(parse_csv_dataset(text, opts), ConfigError);
  opts.label_column = "label";
  try {
    parse_csv_dataset("a,label\n1,0\n2,x\n", opts);
    FAIL() << "expected a parse error";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("<csv>:3:"), std::string::npos) << e.what();
  }
  opts.regression = true;
  EXPECT_FALSE(parse_csv_dataset(text, opts).task.is_classification());
}

class CheckpointFormat : public ::testing::Test {
 protected:
  MultiExitModel model = build_model([] {
    auto c = small_config(3, 5, 3, {1, 3}, 4, 12);
    c.head = {2, 6};
    return c;
  }());
  CheckpointMeta meta{"mixed", "sdn", 7, "tiered-blobs", R"({"k":1})"};
};

TEST_F(CheckpointFormat, RoundTripIsBitExact) {
  const auto bytes = encode_checkpoint(model, meta);
  EXPECT_EQ(bytes.substr(0, 8), "MXCKPT01");
  const auto back = decode_checkpoint(bytes);
  EXPECT_EQ(back.model.config(), model.config());
  EXPECT_EQ(flatten_parameters(back.model), flatten_parameters(model));
  EXPECT_EQ(back.meta.regime, "mixed");
  EXPECT_EQ(back.meta.seed, 7u);
  EXPECT_EQ(back.meta.run_config, meta.run_config);
  EXPECT_EQ(encode_checkpoint(back.model, back.meta), bytes);

  const auto path = (std::filesystem::temp_directory_path() / "exitlab_roundtrip.ckpt").string();
  save_checkpoint(model, meta, path);
  EXPECT_EQ(parameter_hash(load_checkpoint(path).model), parameter_hash(model));
  std::filesystem::remove(path);
  EXPECT_THROW(load_checkpoint(path), IoError);
}

TEST_F(CheckpointFormat, EveryTruncationIsRejected) {
  const auto bytes = encode_checkpoint(model, meta);
  for (std::size_t len = 0; len < bytes.size(); len += 7) {
    EXPECT_THROW(decode_checkpoint(bytes.substr(0, len)), CorruptFileError) << len;
  }
}

TEST_F(CheckpointFormat, SingleByteFlipsAreRejected) {
  const auto bytes = encode_checkpoint(model, meta);
  CounterRng rng(1, "flips");
  for (int trial = 0; trial < 200; ++trial) {
    auto bad = bytes;
    bad[rng.below(bad.size())] ^= static_cast<char>(1 + rng.below(255));
    EXPECT_THROW(decode_checkpoint(bad), CorruptFileError);
  }
}

TEST(Config, ParsesAndRejectsUnknownKeys) {
  const Json j = Json::parse(R"({
    "dataset": {"kind": "spirals", "samples": 120, "classes": 3},
    "model": {"width": 8, "blocks": 4, "scheme": "every-n", "every": 2},
    "regime": {"kind": "mixed", "scaling": "sdn", "max_epochs": 2},
    "policy": {"criterion": "norm_entropy", "budgets": [50, "unlimited"]},
    "seeds": [1, 2]
  })");
  const auto cfg = parse_run_config(j);
  EXPECT_EQ(cfg.dataset.synthetic.kind, SyntheticKind::kSpirals);
  EXPECT_EQ(cfg.regime.kind, RegimeKind::kMixed);
  EXPECT_EQ(cfg.regime.scaling, LossScaling::kSdn);
  EXPECT_EQ(cfg.policy.budgets.size(), 2u);
  EXPECT_DOUBLE_EQ(*cfg.policy.budgets[0], 0.5);
  EXPECT_FALSE(cfg.policy.budgets[1].has_value());
  EXPECT_EQ(cfg.seeds, (std::vector<std::uint64_t>{1, 2}));
  EXPECT_EQ(parse_run_config(to_json(cfg)).regime.train.max_epochs, 2u);

  const auto data = make_dataset(cfg.dataset);
  const auto mc = make_model_config(cfg, data, 1);
  EXPECT_EQ(mc.placements, (std::vector<std::size_t>{2, 4}));
  EXPECT_EQ(model_config_from_json(to_json(mc)), mc);

  for (const char* bad : {R"({"datset": {}})", R"({"model": {"widht": 3}})", R"({"regime": {"kind": "fancy"}})",
                          R"({"model": {"width": "wide"}})", R"({"policy": {"budgets": [-5]}})"}) {
    EXPECT_THROW(parse_run_config(Json::parse(bad)), ConfigError) << bad;
  }
}

TEST(Report, BudgetCsvAndDeterministicSvg) {
  BudgetReport r;
  for (const auto& b : default_budgets()) r.rows.push_back({b, 0.5, 0.4, 0.8, 0.41, 0.79});
  r.val_sweep = {{0.0, 0.3, 0.6, {}}, {1.0, 1.2, 0.8, {}}};
  r.test_sweep = r.val_sweep;
  const ReportContext ctx{R"({"seed":0})", {"criterion=max_prob"}};
  const auto csv = budget_csv(r, ctx);
  std::size_t data_rows = 0;
  std::istringstream in(csv);
  std::string line;
  bool header = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      EXPECT_EQ(line.rfind("budget,parameter,val_cost,test_cost,test_metric", 0), 0u) << line;
      header = true;
      continue;
    }
    ++data_rows;
  }
  EXPECT_EQ(data_rows, 5u);
  EXPECT_NE(csv.find("unlimited"), std::string::npos);

  const auto svg = render_line_plot(cost_metric_plot(r), ctx);
  EXPECT_EQ(svg, render_line_plot(cost_metric_plot(r), ctx));
  EXPECT_EQ(svg.rfind("<svg", 0) == 0 || svg.rfind("<?xml", 0) == 0, true);
  EXPECT_NE(svg.find("<metadata>"), std::string::npos);
  EXPECT_THROW(budget_csv(BudgetReport{}, ctx), InvalidArgument);

  HeatMap h{"t", 2, 2, {0.0, 1.0, 2.0, 10.0}};
  EXPECT_EQ(render_heat_map(h, ctx), render_heat_map(h, ctx));
  EXPECT_THROW(parse_report_format("pdf"), ConfigError);
}

TEST(Runner, TrainsCalibratesAndWritesArtifacts) {
  RunConfig cfg = parse_run_config(Json::parse(R"({
    "dataset": {"kind": "tiered-blobs", "samples": 150, "dim": 3, "classes": 3},
    "model": {"width": 6, "blocks": 2},
    "regime": {"kind": "joint", "max_epochs": 2, "batch_size": 32},
    "policy": {"budgets": ["unlimited"]},
    "analysis": {"gd_every": 1}
  })"));
  const auto data = make_dataset(cfg.dataset);
  const auto result = run_training(cfg, data, 0, RunOptions{true, true});
  EXPECT_EQ(result.log.epochs().size(), 2u);
  EXPECT_EQ(result.gd.epochs.size(), 2u);
  ASSERT_EQ(result.budgets.rows.size(), 1u);
  const auto dir = (std::filesystem::temp_directory_path() / "exitlab_run_test").string();
  std::filesystem::remove_all(dir);
  write_run(result, cfg, dir);
  for (const char* f : {"config.json", "model.ckpt", "budgets.csv", "budgets.svg", "train_log.csv", "gd.csv"}) {
    EXPECT_TRUE(std::filesystem::exists(std::filesystem::path(dir) / f)) << f;
  }
  EXPECT_EQ(parameter_hash(load_checkpoint(dir + "/model.ckpt").model), parameter_hash(result.model));
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace exitlab
