#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "exitlab/analysis/analysis.hpp"
#include "exitlab/errors.hpp"
#include "support/test_support.hpp"

namespace exitlab {
namespace {

using testing::random_tensor;
using testing::small_config;
using testing::toy_dataset;

std::vector<std::size_t> random_permutation(std::size_t n, CounterRng& rng) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[rng.below(i)]);
  return p;
}

Permutation random_model_permutation(const MultiExitModel& m, CounterRng& rng) {
  Permutation p;
  for (std::size_t i = 0; i < m.num_blocks(); ++i) p.layers.push_back(random_permutation(m.config().backbone.width, rng));
  return p;
}

// Every permutation of every layer, enumerated as a mixed-radix counter.
template <typename F>
void for_each_permutation(std::size_t layers, std::size_t width, F&& visit) {
  std::vector<std::size_t> base(width);
  std::iota(base.begin(), base.end(), std::size_t{0});
  std::vector<std::vector<std::size_t>> all;
  do all.push_back(base);
  while (std::next_permutation(base.begin(), base.end()));
  std::vector<std::size_t> idx(layers, 0);
  while (true) {
    Permutation p;
    for (std::size_t l = 0; l < layers; ++l) p.layers.push_back(all[idx[l]]);
    visit(p);
    std::size_t l = 0;
    while (l < layers && ++idx[l] == all.size()) idx[l++] = 0;
    if (l == layers) return;
  }
}

TEST(Hungarian, WorkedExample) {
  const Tensor cost = Tensor::matrix(3, 3, {4, 1, 3, 2, 0, 5, 3, 2, 2});
  const auto a = hungarian(cost);
  EXPECT_DOUBLE_EQ(a.cost, 5.0);
  EXPECT_EQ(a.column_of_row, (std::vector<std::size_t>{1, 0, 2}));
  EXPECT_THROW(hungarian(Tensor({2, 3})), ShapeError);
  EXPECT_THROW(hungarian(Tensor::matrix(2, 2, {1, NAN, 0, 0})), NonFiniteError);
}

TEST(Hungarian, MatchesBruteForce) {
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    CounterRng rng(trial, "hungarian");
    const std::size_t n = 1 + rng.below(6);
    Tensor c({n, n});
    for (auto& v : c.storage()) v = trial % 3 == 0 ? static_cast<double>(rng.below(4)) : rng.normal();
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), std::size_t{0});
    double best = INFINITY;
    do {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += c.at(i, p[i]);
      best = std::min(best, s);
    } while (std::next_permutation(p.begin(), p.end()));
    const auto a = hungarian(c);
    EXPECT_NEAR(a.cost, best, 1e-12);
    double s = 0.0;
    std::vector<bool> used(n, false);
    for (std::size_t i = 0; i < n; ++i) {
      EXPECT_FALSE(used[a.column_of_row[i]]);
      used[a.column_of_row[i]] = true;
      s += c.at(i, a.column_of_row[i]);
    }
    EXPECT_NEAR(s, a.cost, 1e-12);
  }
}

TEST(Permutation, PreservesEveryExitOutput) {
  for (std::uint64_t trial = 0; trial < 10; ++trial) {
    CounterRng rng(trial, "perm-invariance");
    ModelConfig cfg = small_config(3, 2 + rng.below(6), 1 + rng.below(4), {}, 3, trial);
    cfg.placements = placement_scheme(PlacementScheme::kEveryN, cfg.backbone.blocks, 1);
    if (trial % 2) cfg.head = {2, 5};
    const auto m = build_model(cfg);
    const auto perm = random_model_permutation(m, rng);
    const auto pm = apply_permutation(m, perm);
    const Tensor x = random_tensor({9, 3}, rng);
    const auto a = forward_all(m, x);
    const auto b = forward_all(pm, x);
    for (std::size_t k = 0; k < a.logits.size(); ++k) EXPECT_LT(max_abs_diff(a.logits[k], b.logits[k]), 1e-12);
    EXPECT_NEAR(parameter_distance(m, m), 0.0, 0.0);
  }
  const auto m = build_model(small_config(3, 4, 2, {2}, 3));
  Permutation bad = Permutation::identity(m);
  bad.layers[0][0] = 1;
  EXPECT_THROW(apply_permutation(m, bad), InvalidArgument);
  EXPECT_TRUE(Permutation::identity(m).is_identity());
}

TEST(WeightMatch, RecoversPlantedPermutation) {
  for (std::uint64_t trial = 0; trial < 8; ++trial) {
    CounterRng rng(trial, "planted");
    const auto a = build_model(small_config(4, 8, 3, {1, 2, 3}, 3, trial));
    const auto b = apply_permutation(a, random_model_permutation(a, rng));
    const auto r = weight_match(a, b, trial);
    EXPECT_GT(r.distance_before, 0.0);
    EXPECT_LT(r.distance_after, 1e-12);
    EXPECT_LT(parameter_distance(a, apply_permutation(b, r.permutation)), 1e-12);
  }
}

TEST(WeightMatch, SingleLayerIsGloballyOptimal) {
  for (std::uint64_t trial = 0; trial < 10; ++trial) {
    const auto a = build_model(small_config(3, 5, 1, {1}, 3, trial));
    const auto b = build_model(small_config(3, 5, 1, {1}, 3, trial + 100));
    double best = INFINITY;
    for_each_permutation(1, 5, [&](const Permutation& p) {
      best = std::min(best, parameter_distance(a, apply_permutation(b, p)));
    });
    const auto r = weight_match(a, b, trial);
    EXPECT_NEAR(r.distance_after, best, 1e-10);
  }
}

// Coordinate descent is only guaranteed to reach a local optimum for deeper
// nets; it never increases distance and lands at or above the brute force.
TEST(WeightMatch, DeeperNetsImproveMonotonically) {
  for (std::uint64_t trial = 0; trial < 5; ++trial) {
    const auto a = build_model(small_config(3, 4, 2, {2}, 3, trial));
    const auto b = build_model(small_config(3, 4, 2, {2}, 3, trial + 50));
    double best = INFINITY;
    for_each_permutation(2, 4, [&](const Permutation& p) {
      best = std::min(best, parameter_distance(a, apply_permutation(b, p)));
    });
    const auto r = weight_match(a, b, trial);
    EXPECT_LE(r.distance_after, r.distance_before + 1e-12);
    EXPECT_GE(r.distance_after, best - 1e-10);
    EXPECT_NEAR(r.distance_after, parameter_distance(a, apply_permutation(b, r.permutation)), 1e-12);
  }
}

TEST(GradientDominance, IdentitiesAndIndependentCosines) {
  CounterRng rng(2, "gd");
  const auto m = build_model(small_config(3, 6, 3, {1, 2, 3}, 3, 7));
  const Tensor x = random_tensor({12, 3}, rng);
  std::vector<double> y(12);
  for (auto& v : y) v = static_cast<double>(rng.below(3));
  const std::vector<double> alpha = {0.5, 1.0, 1.5};
  const auto gd = gradient_dominance(m, x, y, alpha);

  double sum_inner = 0.0;
  for (double v : gd.inner) sum_inner += v;
  EXPECT_NEAR(sum_inner, gd.total_norm_sq, 1e-10 * std::max(1.0, gd.total_norm_sq));

  // Oracle: per-exit backbone gradients from one-hot graphs.
  const auto names = m.backbone_parameter_names();
  std::vector<std::vector<double>> g(3);
  for (std::size_t k = 0; k < 3; ++k) {
    std::vector<double> w(3, 0.0);
    w[k] = alpha[k];
    ModelGraph mg = build_graph(m, {w, {}});
    mg.graph.forward(bind_model(m, x, targets_column(y)));
    const auto grads = mg.graph.grad(names);
    for (const auto& n : names) {
      const auto it = grads.find(n);
      const auto size = m.parameter(n).size();
      for (std::size_t i = 0; i < size; ++i) g[k].push_back(it == grads.end() ? 0.0 : it->second[i]);
    }
  }
  std::vector<double> total(g[0].size(), 0.0);
  for (const auto& gk : g) {
    for (std::size_t i = 0; i < total.size(); ++i) total[i] += gk[i];
  }
  const double tn = std::sqrt(std::inner_product(total.begin(), total.end(), total.begin(), 0.0));
  for (std::size_t k = 0; k < 3; ++k) {
    const double dot = std::inner_product(g[k].begin(), g[k].end(), total.begin(), 0.0);
    const double nk = std::sqrt(std::inner_product(g[k].begin(), g[k].end(), g[k].begin(), 0.0));
    EXPECT_NEAR(gd.gd[k], dot / (nk * tn), 1e-10);
    EXPECT_GE(gd.gd[k], -1.0);
    EXPECT_LE(gd.gd[k], 1.0);
  }

  // A single exit dominates itself; a zero weight gives a zero score.
  const auto single = build_model(small_config(3, 6, 2, {2}, 3, 7));
  EXPECT_NEAR(gradient_dominance(single, x, y, std::vector<double>{1.0}).gd[0], 1.0, 1e-12);
  EXPECT_EQ(gradient_dominance(m, x, y, std::vector<double>{0.0, 1.0, 1.0}).gd[0], 0.0);
}

class Connectivity : public ::testing::Test {
 protected:
  Dataset data = toy_dataset(20, 16, 16, 3, 3, 4);
  MultiExitModel a = build_model(small_config(3, 4, 2, {1, 2}, 3, 1));
  MultiExitModel b = build_model(small_config(3, 4, 2, {1, 2}, 3, 2));
  MultiExitModel c = build_model(small_config(3, 4, 2, {1, 2}, 3, 3));
  std::vector<double> alpha = {1.0, 1.0};
};

TEST_F(Connectivity, PathEndpointsAndMidpointReEvaluate) {
  const auto perm = weight_match(a, b).permutation;
  const std::vector<double> lambdas = {0.0, 0.3, 1.0};
  const auto grid = interpolate_loss(a, b, perm, lambdas, data.val, alpha);
  ASSERT_EQ(grid.total.size(), 3u);
  EXPECT_NEAR(grid.total[0], evaluate_loss(a, data.val, alpha).total, 1e-12);
  const auto pb = apply_permutation(b, perm);
  EXPECT_NEAR(grid.total[2], evaluate_loss(pb, data.val, alpha).total, 1e-12);
  auto mid = a;
  const auto fa = flatten_parameters(a), fb = flatten_parameters(pb);
  std::vector<double> f(fa.size());
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = 0.7 * fa[i] + 0.3 * fb[i];
  assign_parameters(mid, f);
  const auto expect = evaluate_loss(mid, data.val, alpha);
  EXPECT_NEAR(grid.total[1], expect.total, 1e-12);
  for (std::size_t k = 0; k < 2; ++k) EXPECT_NEAR(grid.per_exit[1][k], expect.per_exit[k], 1e-12);
}

TEST_F(Connectivity, PlaneGridMatchesDirectEvaluation) {
  EXPECT_EQ(plane_margin(25), 4u);
  EXPECT_DOUBLE_EQ(plane_coordinate(4, 25), 0.0);
  EXPECT_DOUBLE_EQ(plane_coordinate(20, 25), 1.0);
  EXPECT_DOUBLE_EQ(plane_coordinate(0, 25), -0.25);
  const std::size_t r = 7;
  const auto grid = plane_loss(a, b, c, r, data.val, alpha, 5);
  ASSERT_EQ(grid.total.size(), r * r);
  ASSERT_EQ(grid.permutations.size(), 2u);
  const auto fa = flatten_parameters(a);
  const auto fb = flatten_parameters(apply_permutation(b, grid.permutations[0]));
  const auto fc = flatten_parameters(apply_permutation(c, grid.permutations[1]));
  for (std::size_t i = 0; i < r * r; i += 5) {
    std::vector<double> f(fa.size());
    for (std::size_t j = 0; j < f.size(); ++j) f[j] = fa[j] + grid.u[i] * (fb[j] - fa[j]) + grid.v[i] * (fc[j] - fa[j]);
    auto m = a;
    assign_parameters(m, f);
    EXPECT_NEAR(grid.total[i], evaluate_loss(m, data.val, alpha).total, 1e-12) << "point " << i;
  }
  const std::size_t p = plane_margin(r);
  EXPECT_NEAR(grid.total[p * r + p], evaluate_loss(a, data.val, alpha).total, 1e-12);
}

TEST(Rank, WorkedExamples) {
  EXPECT_EQ(numerical_rank(Tensor::matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1})), 3u);
  EXPECT_EQ(numerical_rank(Tensor::matrix(3, 2, {1, 2, 2, 4, 3, 6})), 1u);
  EXPECT_EQ(numerical_rank(Tensor({4, 3})), 0u);
  EXPECT_EQ(numerical_rank(Tensor::matrix(2, 2, {1, 0, 0, 1e-4})), 1u);
  EXPECT_EQ(numerical_rank(Tensor::matrix(2, 2, {1, 0, 0, 1e-2})), 2u);
  CounterRng rng(1, "rank");
  EXPECT_EQ(numerical_rank(random_tensor({10, 4}, rng)), 4u);
  // Product of thin factors has rank at most the inner dimension.
  EXPECT_EQ(numerical_rank(matmul(random_tensor({12, 3}, rng), random_tensor({3, 9}, rng))), 3u);
}

TEST(Rank, ProfileCoversEveryBlock) {
  CounterRng rng(1, "rank-profile");
  const auto m = build_model(small_config(3, 6, 4, {2, 4}, 3));
  const auto profile = rank_profile(m, random_tensor({20, 3}, rng));
  ASSERT_EQ(profile.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(profile[i].block, i + 1);
    EXPECT_LE(profile[i].rank, 6u);
    EXPECT_EQ(profile[i].samples, 20u);
  }
}

TEST(MutualInformation, WorkedExamples) {
  EXPECT_DOUBLE_EQ(binned_pattern_entropy(Tensor::matrix(4, 2, {1, 1, 1, 1, 1, 1, 1, 1}), 30), 0.0);
  EXPECT_NEAR(binned_pattern_entropy(Tensor::matrix(4, 1, {0, 0, 1, 1}), 30), 1.0, 1e-12);
  EXPECT_NEAR(binned_pattern_entropy(Tensor::matrix(4, 1, {0, 1, 2, 3}), 30), 2.0, 1e-12);
  // Two bins merge 0 and 1 into one cell and 2 and 3 into the other.
  EXPECT_NEAR(binned_pattern_entropy(Tensor::matrix(4, 1, {0, 1, 2, 3}), 2), 1.0, 1e-12);
  CounterRng rng(3, "mi");
  const Tensor x = random_tensor({64, 5}, rng);
  const double h = binned_pattern_entropy(x, 30);
  EXPECT_LE(h, std::log2(64.0) + 1e-12);
  EXPECT_GE(h, 0.0);
  EXPECT_THROW(binned_pattern_entropy(x, 0), InvalidArgument);
}

TEST(Landscape, AnchorAndDirectionNorms) {
  const auto data = toy_dataset(16, 16, 16, 3, 3, 8);
  ModelConfig cfg = small_config(3, 5, 2, {1, 2}, 3, 6);
  cfg.head = {2, 4};
  const auto m = build_model(cfg);
  const std::vector<double> alpha = {1.0, 1.0};
  const auto grid = loss_landscape(m, data.val, 5, 9, alpha);
  ASSERT_EQ(grid.total.size(), 25u);
  EXPECT_EQ(grid.coords, (std::vector<double>{-1.0, -0.5, 0.0, 0.5, 1.0}));
  EXPECT_EQ(grid.total[12], evaluate_loss(m, data.val, alpha).total);
  EXPECT_THROW(loss_landscape(m, data.val, 4, 9, alpha), InvalidArgument);

  auto dir = m;
  assign_parameters(dir, grid.delta);
  for (const auto& name : m.parameter_names()) {
    const Tensor& p = m.parameter(name);
    const Tensor& d = dir.parameter(name);
    if (p.rank() == 2) {
      for (std::size_t j = 0; j < p.cols(); ++j) {
        double np = 0.0, nd = 0.0;
        for (std::size_t i = 0; i < p.rows(); ++i) {
          np += p.at(i, j) * p.at(i, j);
          nd += d.at(i, j) * d.at(i, j);
        }
        EXPECT_NEAR(std::sqrt(nd), std::sqrt(np), 1e-12) << name << " column " << j;
      }
    } else {
      EXPECT_NEAR(frobenius_norm(d), frobenius_norm(p), 1e-12) << name;
    }
  }

  // Re-evaluate one off-centre point by hand.
  const auto theta = flatten_parameters(m);
  std::vector<double> f(theta.size());
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = theta[i] + 0.5 * grid.delta[i] - 1.0 * grid.eta[i];
  auto probe = m;
  assign_parameters(probe, f);
  EXPECT_NEAR(grid.total[0 * 5 + 3], evaluate_loss(probe, data.val, alpha).total, 1e-12);
  EXPECT_NE(grid.delta, grid.eta);
}

}  // namespace
}  // namespace exitlab
