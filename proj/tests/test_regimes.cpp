#include <gtest/gtest.h>

#include <algorithm>
#include <limits>

#include "exitlab/errors.hpp"
#include "exitlab/regimes/regimes.hpp"
#include "support/test_support.hpp"

namespace exitlab {
namespace {

using testing::small_config;
using testing::toy_dataset;

TrainConfig quick_train(std::size_t epochs = 3) {
  TrainConfig t;
  t.batch_size = 16;
  t.max_epochs = epochs;
  t.patience = 100;
  t.max_lr = 1e-2;
  t.restart_epochs = 2;
  t.seed = 3;
  return t;
}

// Replays a metric history from scratch: an epoch counts as an improvement
// when some exit beats every earlier value of that exit.
std::size_t stop_epoch_oracle(const std::vector<std::vector<double>>& history, std::size_t patience) {
  std::size_t stale = 0;
  for (std::size_t t = 0; t < history.size(); ++t) {
    bool improved = false;
    for (std::size_t k = 0; k < history[t].size(); ++k) {
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t s = 0; s < t; ++s) best = std::max(best, history[s][k]);
      improved = improved || history[t][k] > best;
    }
    stale = improved ? 0 : stale + 1;
    if (stale >= patience) return t;
  }
  return history.size();
}

TEST(EarlyStopping, MatchesReplayOracleOnRandomHistories) {
  for (std::uint64_t trial = 0; trial < 200; ++trial) {
    CounterRng rng(trial, "early-stop");
    const std::size_t exits = 1 + rng.below(4);
    const std::size_t patience = 1 + rng.below(5);
    std::vector<std::vector<double>> history(5 + rng.below(30), std::vector<double>(exits));
    // Coarse values produce plenty of ties, which must not count as progress.
    for (auto& row : history) {
      for (auto& v : row) v = static_cast<double>(rng.below(6)) / 5.0;
    }
    EarlyStopState state(exits, patience, MetricDirection::kHigherIsBetter);
    std::size_t stopped = history.size();
    for (std::size_t t = 0; t < history.size(); ++t) {
      if (early_stop_update(state, history[t]) == StopDecision::kStop) {
        stopped = t;
        break;
      }
    }
    EXPECT_EQ(stopped, stop_epoch_oracle(history, patience)) << "trial " << trial;
  }
}

TEST(EarlyStopping, AnyImprovingExitKeepsTrainingAlive) {
  EarlyStopState state(2, 2, MetricDirection::kLowerIsBetter);
  EXPECT_EQ(early_stop_update(state, std::vector<double>{1.0, 1.0}), StopDecision::kContinue);
  EXPECT_EQ(early_stop_update(state, std::vector<double>{2.0, 0.9}), StopDecision::kContinue);
  EXPECT_EQ(early_stop_update(state, std::vector<double>{2.0, 0.9}), StopDecision::kContinue);
  EXPECT_EQ(early_stop_update(state, std::vector<double>{0.5, 3.0}), StopDecision::kContinue);
  EXPECT_EQ(early_stop_update(state, std::vector<double>{0.5, 0.9}), StopDecision::kContinue);
  EXPECT_EQ(early_stop_update(state, std::vector<double>{0.6, 0.95}), StopDecision::kStop);
  EXPECT_THROW(early_stop_update(state, std::vector<double>{1.0}), InvalidArgument);
  EXPECT_THROW(EarlyStopState(1, 0, MetricDirection::kLowerIsBetter), InvalidArgument);
}

TEST(LossWeights, ClosedFormSchemes) {
  CostModel cost;
  cost.block_flops = {1, 1, 2};
  cost.head_flops = {0, 0, 0};
  cost.placements = {1, 2, 3};
  cost.backbone_cost = 4;
  const auto near = [](const std::vector<double>& a, const std::vector<double>& b) {
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
  };
  near(loss_weights(LossScaling::kUniform, 3, cost), {1, 1, 1});
  near(loss_weights(LossScaling::kGe, 3, cost), {1, 1, 1});
  near(loss_weights(LossScaling::kInc, 3, cost), {0.5, 1.0, 1.5});
  near(loss_weights(LossScaling::kDec, 3, cost), {1.5, 1.0, 0.5});
  near(loss_weights(LossScaling::kSdn, 3, cost), {3.0 / 7, 6.0 / 7, 12.0 / 7});
  EXPECT_THROW(loss_weights(LossScaling::kSdn, 2, cost), InvalidArgument);
  EXPECT_THROW(loss_weights(LossScaling::kInc, 0, cost), InvalidArgument);
}

TEST(LossWeights, AlwaysSumToExitCount) {
  for (std::uint64_t trial = 0; trial < 30; ++trial) {
    CounterRng rng(trial, "weights");
    const std::size_t blocks = 1 + rng.below(6);
    const auto placements = placement_scheme(PlacementScheme::kEveryN, blocks, 1 + rng.below(blocks));
    const auto cost = cost_model(build_model(small_config(3, 2 + rng.below(6), blocks, placements, 3)));
    for (auto s : {LossScaling::kUniform, LossScaling::kInc, LossScaling::kDec, LossScaling::kSdn}) {
      const auto w = loss_weights(s, placements.size(), cost);
      double sum = 0.0;
      for (double v : w) {
        EXPECT_GT(v, 0.0);
        sum += v;
      }
      EXPECT_NEAR(sum, static_cast<double>(placements.size()), 1e-12);
    }
  }
}

TEST(GradientEquilibrium, BlocksAverageOverExitsThatReachThem) {
  const auto g = [](double b0, double b1, double head) {
    return GradientMap{{"backbone.0.weight", Tensor::vector({b0})},
                       {"backbone.1.weight", Tensor::vector({b1})},
                       {"head.0.0.weight", Tensor::vector({head})}};
  };
  const auto out = ge_combine({g(2, 0, 5), g(4, 6, 1)}, {1, 2}, 2);
  EXPECT_DOUBLE_EQ(out.at("backbone.0.weight")[0], 3.0);
  EXPECT_DOUBLE_EQ(out.at("backbone.1.weight")[0], 6.0);
  EXPECT_DOUBLE_EQ(out.at("head.0.0.weight")[0], 6.0);

  // With every exit at the last block it reduces to the plain mean.
  const auto mean = ge_combine({g(1, 2, 0), g(3, 4, 0), g(5, 9, 0)}, {2, 2, 2}, 2);
  EXPECT_DOUBLE_EQ(mean.at("backbone.0.weight")[0], 3.0);
  EXPECT_DOUBLE_EQ(mean.at("backbone.1.weight")[0], 5.0);

  EXPECT_THROW(ge_combine({g(1, 1, 1)}, {1, 2}, 2), InvalidArgument);
  GradientMap odd = g(1, 1, 1);
  odd.erase("head.0.0.weight");
  EXPECT_THROW(ge_combine({g(1, 1, 1), odd}, {1, 2}, 2), ShapeError);
}

TEST(Names, RoundTripAndRejectUnknown) {
  for (auto k : {RegimeKind::kDisjoint, RegimeKind::kJoint, RegimeKind::kMixed, RegimeKind::kBranchWise,
                 RegimeKind::kSeparate, RegimeKind::kAlternating, RegimeKind::kMixedGradual}) {
    EXPECT_EQ(parse_regime(to_string(k)), k);
  }
  for (auto s : {LossScaling::kUniform, LossScaling::kInc, LossScaling::kDec, LossScaling::kSdn, LossScaling::kGe}) {
    EXPECT_EQ(parse_scaling(to_string(s)), s);
  }
  EXPECT_THROW(parse_regime("semi-joint"), ConfigError);
  EXPECT_THROW(parse_scaling("cubic"), ConfigError);
}

class FreezeContract : public ::testing::Test {
 protected:
  Dataset data = toy_dataset(64, 32, 32, 3, 3, 11);
  MultiExitModel model = build_model(small_config(3, 6, 3, {1, 2, 3}, 3, 4));

  std::vector<std::uint64_t> head_hashes(const MultiExitModel& m) {
    std::vector<std::uint64_t> h;
    for (std::size_t k = 0; k < m.num_exits(); ++k) h.push_back(parameter_hash(m, m.head_parameter_names(k)));
    return h;
  }
};

TEST_F(FreezeContract, PhaseOneTouchesOnlyBackboneAndFinalHead) {
  const auto before = head_hashes(model);
  const auto backbone = parameter_hash(model, model.backbone_parameter_names());
  TrainLog log;
  run_phase1(model, data, quick_train(), log);
  const auto after = head_hashes(model);
  EXPECT_EQ(after[0], before[0]);
  EXPECT_EQ(after[1], before[1]);
  EXPECT_NE(after[2], before[2]);
  EXPECT_NE(parameter_hash(model, model.backbone_parameter_names()), backbone);
}

TEST_F(FreezeContract, PhaseThreeLeavesBackboneBitIdentical) {
  const auto backbone = parameter_hash(model, model.backbone_parameter_names());
  const auto before = head_hashes(model);
  TrainLog log;
  const auto outcome = run_phase3(model, data, quick_train(), std::vector<double>{1, 1, 1}, log);
  EXPECT_EQ(parameter_hash(model, model.backbone_parameter_names()), backbone);
  const auto after = head_hashes(model);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NE(after[k], before[k]);
  for (const auto& name : model.backbone_parameter_names()) {
    for (double v : outcome.optimizer.first_moment.at(name).data()) EXPECT_EQ(v, 0.0);
    for (double v : outcome.optimizer.second_moment.at(name).data()) EXPECT_EQ(v, 0.0);
  }
}

TEST_F(FreezeContract, BranchWiseTrainsOnlyItsSegment) {
  RegimeSpec spec{RegimeKind::kBranchWise, LossScaling::kUniform, quick_train()};
  const auto plans = regime_plans(spec, model);
  ASSERT_EQ(plans.size(), 3u);
  std::vector<std::string> expected = model.block_parameter_names(1);
  for (const auto& n : model.head_parameter_names(1)) expected.push_back(n);
  auto got = plans[1].objective.trainable;
  std::sort(got.begin(), got.end());
  std::sort(expected.begin(), expected.end());
  EXPECT_EQ(got, expected);

  const auto block0 = parameter_hash(model, model.block_parameter_names(0));
  TrainLog log;
  run_phase(model, data, plans[1], spec.train, log);
  EXPECT_EQ(parameter_hash(model, model.block_parameter_names(0)), block0);
}

TEST(RegimePlans, PhaseStructure) {
  const auto model = build_model(small_config(3, 4, 3, {1, 2, 3}, 3));
  auto names = [&](RegimeKind kind) {
    std::vector<std::string> out;
    for (const auto& p : regime_plans({kind, LossScaling::kUniform, quick_train()}, model)) out.push_back(p.name);
    return out;
  };
  EXPECT_EQ(names(RegimeKind::kJoint), (std::vector<std::string>{"phase2"}));
  EXPECT_EQ(names(RegimeKind::kMixed), (std::vector<std::string>{"phase1", "phase2"}));
  EXPECT_EQ(names(RegimeKind::kDisjoint), (std::vector<std::string>{"phase1", "phase3"}));
  EXPECT_EQ(names(RegimeKind::kSeparate).size(), 3u);
  EXPECT_EQ(names(RegimeKind::kMixedGradual), (std::vector<std::string>{"phase1", "gradual2", "phase2"}));

  const auto gradual = regime_plans({RegimeKind::kMixedGradual, LossScaling::kInc, quick_train()}, model);
  EXPECT_EQ(gradual[1].objective.alpha, (std::vector<double>{0.0, 1.0, 1.5}));
  EXPECT_EQ(gradual[1].monitored, (std::vector<std::size_t>{1, 2}));
}

TEST(RegimePlans, GradualWithTwoExitsEqualsMixed) {
  const auto model = build_model(small_config(3, 4, 2, {1, 2}, 3));
  const auto a = regime_plans({RegimeKind::kMixedGradual, LossScaling::kSdn, quick_train()}, model);
  const auto b = regime_plans({RegimeKind::kMixed, LossScaling::kSdn, quick_train()}, model);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].name, b[i].name);
    EXPECT_EQ(a[i].objective.alpha, b[i].objective.alpha);
    EXPECT_EQ(a[i].objective.trainable, b[i].objective.trainable);
    EXPECT_EQ(a[i].monitored, b[i].monitored);
  }
}

TEST(RunRegime, MixedLogsTwoPhasesJointOne) {
  const auto data = toy_dataset(48, 24, 24, 3, 3, 2);
  auto m1 = build_model(small_config(3, 5, 2, {1, 2}, 3, 1));
  auto m2 = m1;
  const auto mixed = run_regime({RegimeKind::kMixed, LossScaling::kUniform, quick_train(2)}, m1, data);
  const auto joint = run_regime({RegimeKind::kJoint, LossScaling::kUniform, quick_train(2)}, m2, data);
  EXPECT_EQ(mixed.phase_ids(), (std::vector<std::string>{"phase1", "phase2"}));
  EXPECT_EQ(joint.phase_ids(), (std::vector<std::string>{"phase2"}));
  EXPECT_EQ(mixed.epochs().size(), 4u);
  for (std::size_t i = 0; i < mixed.epochs().size(); ++i) EXPECT_EQ(mixed.epochs()[i].epoch, i);
}

TEST(RunRegime, AlternatingSplitsStepsEvenly) {
  const auto data = toy_dataset(50, 20, 20, 3, 3, 5);
  auto m = build_model(small_config(3, 5, 2, {1, 2}, 3, 1));
  const auto log = run_regime({RegimeKind::kAlternating, LossScaling::kUniform, quick_train(3)}, m, data);
  ASSERT_EQ(log.phases().size(), 1u);
  const auto& p = log.phases()[0];
  EXPECT_EQ(p.steps, 3u * 4u);
  EXPECT_EQ(p.final_only_steps + p.all_exit_steps, p.steps);
  EXPECT_EQ(p.final_only_steps, (p.steps + 1) / 2);
}

TEST(RunRegime, SeededRunsAreBitReproducible) {
  const auto data = toy_dataset(40, 20, 20, 3, 3, 6);
  for (auto kind : {RegimeKind::kJoint, RegimeKind::kSeparate}) {
    auto a = build_model(small_config(3, 5, 2, {1, 2}, 3, 9));
    auto b = a;
    run_regime({kind, LossScaling::kGe, quick_train(2)}, a, data);
    run_regime({kind, LossScaling::kGe, quick_train(2)}, b, data);
    EXPECT_EQ(parameter_hash(a), parameter_hash(b));
  }
}

TEST(RunRegime, EarlyStopsWhenValidationStalls) {
  const auto data = toy_dataset(30, 10, 10, 3, 3, 7);
  auto m = build_model(small_config(3, 5, 1, {1}, 3, 2));
  TrainConfig t = quick_train(200);
  t.patience = 2;
  t.max_lr = 0.0;
  t.min_lr = 0.0;
  const auto log = run_regime({RegimeKind::kJoint, LossScaling::kUniform, t}, m, data);
  // A frozen model improves once (from -inf) and then stalls for two epochs.
  EXPECT_TRUE(log.phases()[0].early_stopped);
  EXPECT_EQ(log.epochs().size(), 3u);
}

TEST(RunRegime, DivergenceIsReported) {
  const auto data = toy_dataset(32, 8, 8, 3, 3, 8);
  auto m = build_model(small_config(3, 5, 2, {1, 2}, 3, 2));
  for (const auto& name : m.parameter_names()) {
    for (auto& v : m.parameter(name).data()) v *= 1e200;
  }
  EXPECT_THROW(run_regime({RegimeKind::kJoint, LossScaling::kUniform, quick_train(1)}, m, data), DivergenceError);
}

}  // namespace
}  // namespace exitlab
