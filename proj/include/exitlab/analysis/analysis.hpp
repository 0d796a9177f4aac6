#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "exitlab/common/dataset.hpp"
#include "exitlab/multiexit/model.hpp"

namespace exitlab {

// ---------------------------------------------------------------------------
// Gradient dominance

struct GradientDominance {
  std::vector<double> gd;     // cos(g_k, g_total), 0 when g_k vanishes
  std::vector<double> inner;  // <g_k, g_total>
  double total_norm_sq = 0.0;
};

// g_k = d(alpha_k L_k)/d(backbone); heads are excluded.
GradientDominance gradient_dominance(const MultiExitModel& model, const Tensor& batch,
                                     std::span<const double> targets, std::span<const double> alpha);
// Cosines from already-scaled, equally long flattened per-exit gradients.
GradientDominance gradient_dominance(const std::vector<std::vector<double>>& per_exit);

struct GDTrace {
  std::vector<std::size_t> epochs;
  std::vector<std::vector<double>> values;  // one GD vector per logged epoch

  void append(std::size_t epoch, std::vector<double> gd);
};

// ---------------------------------------------------------------------------
// Linear assignment

struct Assignment {
  std::vector<std::size_t> column_of_row;
  double cost = 0.0;
};

// Minimum-cost perfect matching on a square finite matrix, O(n^3).
Assignment hungarian(const Tensor& cost);

// ---------------------------------------------------------------------------
// Permutation symmetry

// layers[i][j] is the unit of the source model that lands at position j of
// block i's output. Input features and head outputs are never permuted.
struct Permutation {
  std::vector<std::vector<std::size_t>> layers;

  static Permutation identity(const MultiExitModel& model);
  bool is_identity() const;
  void validate(const MultiExitModel& model) const;
};

MultiExitModel apply_permutation(const MultiExitModel& model, const Permutation& perm);

// Frobenius distance over every parameter.
double parameter_distance(const MultiExitModel& a, const MultiExitModel& b);

struct MatchResult {
  Permutation permutation;
  double distance_before = 0.0;
  double distance_after = 0.0;
  std::size_t sweeps = 0;
};

// Aligns b to a by coordinate descent over backbone layers, solving each
// layer's assignment exactly. Layer order is reshuffled every sweep.
MatchResult weight_match(const MultiExitModel& a, const MultiExitModel& b, std::uint64_t seed = 0,
                         std::size_t max_sweeps = 50);

// ---------------------------------------------------------------------------
// Mode connectivity

enum class ConnectivityMode { kPath, kPlane };

struct ConnectivityGrid {
  ConnectivityMode mode = ConnectivityMode::kPath;
  // Path: one coordinate per point (lambda). Plane: resolution × resolution
  // points, row-major over (v, u); vertices at A=(0,0), B=(1,0), C=(0,1).
  std::vector<double> u;
  std::vector<double> v;
  std::size_t resolution = 0;
  std::vector<double> total;
  std::vector<std::vector<double>> per_exit;  // per point
  std::vector<Permutation> permutations;
};

// theta(lambda) = (1 - lambda) A + lambda * perm(B).
MultiExitModel blend(const MultiExitModel& a, const MultiExitModel& b, double lambda);

ConnectivityGrid interpolate_loss(const MultiExitModel& a, const MultiExitModel& b, const Permutation& perm,
                                  std::span<const double> lambdas, const Split& split,
                                  std::span<const double> alpha);

// Grid margin and coordinate of index i on a plane grid of the given resolution.
std::size_t plane_margin(std::size_t resolution);
double plane_coordinate(std::size_t i, std::size_t resolution);

// B and C are aligned to A first. The plane is A + u (B' - A) + v (C' - A).
ConnectivityGrid plane_loss(const MultiExitModel& a, const MultiExitModel& b, const MultiExitModel& c,
                            std::size_t resolution, const Split& split, std::span<const double> alpha,
                            std::uint64_t seed = 0);

// ---------------------------------------------------------------------------
// Representation instruments

struct RankEntry {
  std::size_t block = 0;
  std::size_t rank = 0;
  std::size_t samples = 0;
  std::size_t features = 0;
  double tolerance = 0.0;
};
using RankProfile = std::vector<RankEntry>;

// #{sigma_j > rel_tol * sigma_1}; zero for a zero matrix.
std::size_t numerical_rank(const Tensor& matrix, double rel_tol = 1e-3);
RankProfile rank_profile(const MultiExitModel& model, const Tensor& batch, double rel_tol = 1e-3);

struct MIEntry {
  std::size_t block = 0;
  double bits = 0.0;
  std::size_t bins = 0;
  std::size_t samples = 0;
};
using MIProfile = std::vector<MIEntry>;

// Entropy in bits of the per-row bin patterns, each column binned into
// `bins` equal-width cells over its observed range.
double binned_pattern_entropy(const Tensor& activations, std::size_t bins);
MIProfile mi_profile(const MultiExitModel& model, const Tensor& batch, std::size_t bins = 30);

// ---------------------------------------------------------------------------
// Loss landscape

struct LandscapeGrid {
  std::size_t resolution = 0;
  std::vector<double> coords;  // x and y share the same axis
  std::vector<double> total;   // row-major over (y, x)
  std::vector<std::vector<double>> per_exit;  // per point
  std::vector<double> delta;   // flattened, canonical parameter order
  std::vector<double> eta;
};

// Gaussian direction with every weight column (one output neuron) rescaled
// to the norm of the model's column, and every bias to the model's bias norm.
std::vector<double> filter_normalized_direction(const MultiExitModel& model, std::uint64_t seed,
                                                const std::string& stream);

LandscapeGrid loss_landscape(const MultiExitModel& model, const Split& split, std::size_t resolution,
                             std::uint64_t seed, std::span<const double> alpha);

// Total and per-exit losses of a model on a split.
MultiExitLoss evaluate_loss(const MultiExitModel& model, const Split& split, std::span<const double> alpha);

}  // namespace exitlab
