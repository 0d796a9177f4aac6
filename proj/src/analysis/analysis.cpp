#include "exitlab/analysis/analysis.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "exitlab/common/parallel.hpp"
#include "exitlab/errors.hpp"
#include "exitlab/numerics/rng.hpp"

namespace exitlab {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void permute_columns(Tensor& w, const std::vector<std::size_t>& p) {
  const Tensor src = w;
  for (std::size_t r = 0; r < w.rows(); ++r) {
    for (std::size_t j = 0; j < p.size(); ++j) w.at(r, j) = src.at(r, p[j]);
  }
}

void permute_rows(Tensor& w, const std::vector<std::size_t>& p) {
  const Tensor src = w;
  for (std::size_t j = 0; j < p.size(); ++j) {
    for (std::size_t c = 0; c < w.cols(); ++c) w.at(j, c) = src.at(p[j], c);
  }
}

void permute_vector(Tensor& b, const std::vector<std::size_t>& p) {
  const Tensor src = b;
  for (std::size_t j = 0; j < p.size(); ++j) b[j] = src[p[j]];
}

// S[j][l] = similarity of unit j in `a` with unit l in `b` over every tensor
// that block `layer`'s units index.
Tensor unit_similarity(const MultiExitModel& a, const MultiExitModel& b, std::size_t layer) {
  const std::size_t width = a.block(layer).bias.size();
  Tensor s({width, width}, 0.0);
  const auto& wa = a.block(layer).weight;
  const auto& wb = b.block(layer).weight;
  const auto& ba = a.block(layer).bias;
  const auto& bb = b.block(layer).bias;
  for (std::size_t j = 0; j < width; ++j) {
    for (std::size_t l = 0; l < width; ++l) {
      double v = ba[j] * bb[l];
      for (std::size_t r = 0; r < wa.rows(); ++r) v += wa.at(r, j) * wb.at(r, l);
      s.at(j, l) = v;
    }
  }
  auto add_rows = [&](const Tensor& ta, const Tensor& tb) {
    for (std::size_t j = 0; j < width; ++j) {
      for (std::size_t l = 0; l < width; ++l) s.at(j, l) += dot(ta.row(j), tb.row(l));
    }
  };
  if (layer + 1 < a.num_blocks()) add_rows(a.block(layer + 1).weight, b.block(layer + 1).weight);
  for (std::size_t k = 0; k < a.num_exits(); ++k) {
    if (a.placement(k) == layer + 1) add_rows(a.head(k).front().weight, b.head(k).front().weight);
  }
  return s;
}

MultiExitModel combine(const MultiExitModel& base, const std::vector<double>& theta,
                       const std::vector<std::pair<double, const std::vector<double>*>>& terms) {
  std::vector<double> flat = theta;
  for (const auto& [w, dir] : terms) {
    if (w == 0.0) continue;
    for (std::size_t i = 0; i < flat.size(); ++i) flat[i] += w * (*dir)[i];
  }
  MultiExitModel out = base;
  assign_parameters(out, flat);
  return out;
}

void require_alpha(const MultiExitModel& model, std::span<const double> alpha) {
  if (alpha.size() != model.num_exits()) throw InvalidArgument("alpha needs one weight per exit");
}

}  // namespace

// ---------------------------------------------------------------------------

GradientDominance gradient_dominance(const MultiExitModel& model, const Tensor& batch,
                                     std::span<const double> targets, std::span<const double> alpha) {
  require_alpha(model, alpha);
  const std::size_t K = model.num_exits();
  GraphOptions options;
  options.alpha.assign(alpha.begin(), alpha.end());
  if (std::all_of(options.alpha.begin(), options.alpha.end(), [](double a) { return a == 0.0; })) {
    options.alpha.back() = 1.0;  // the total node needs one term; it is not differentiated here
  }
  ModelGraph mg = build_graph(model, options);
  const Tensor y = targets_column(targets);
  mg.graph.forward(bind_model(model, batch, y));

  std::vector<std::string> names;
  for (const auto& n : model.backbone_parameter_names()) {
    if (mg.graph.has_leaf(n)) names.push_back(n);
  }
  std::vector<std::vector<double>> g(K);
  for (std::size_t k = 0; k < K; ++k) {
    if (alpha[k] == 0.0) continue;
    const GradientMap gm = mg.graph.grad(names, mg.losses[k]);
    for (const auto& n : names) {
      for (double v : gm.at(n).data()) g[k].push_back(alpha[k] * v);
    }
  }
  std::size_t dim = 0;
  for (const auto& gk : g) dim = std::max(dim, gk.size());
  for (auto& gk : g) gk.resize(dim, 0.0);
  return gradient_dominance(g);
}

GradientDominance gradient_dominance(const std::vector<std::vector<double>>& per_exit) {
  if (per_exit.empty()) throw InvalidArgument("gradient dominance needs at least one exit");
  const std::size_t dim = per_exit.front().size();
  std::vector<double> total(dim, 0.0);
  for (const auto& gk : per_exit) {
    if (gk.size() != dim) throw ShapeError("per-exit gradients differ in length");
    for (std::size_t i = 0; i < dim; ++i) total[i] += gk[i];
  }

  GradientDominance out;
  out.total_norm_sq = dot(total, total);
  const double total_norm = std::sqrt(out.total_norm_sq);
  for (const auto& gk : per_exit) {
    const double inner = dot(gk, total);
    const double norm = std::sqrt(dot(gk, gk));
    out.inner.push_back(inner);
    out.gd.push_back(norm == 0.0 || total_norm == 0.0 ? 0.0 : std::clamp(inner / (norm * total_norm), -1.0, 1.0));
  }
  return out;
}

void GDTrace::append(std::size_t epoch, std::vector<double> gd) {
  if (!values.empty() && gd.size() != values.front().size()) {
    throw InvalidArgument("GD trace entries must have the same exit count");
  }
  epochs.push_back(epoch);
  values.push_back(std::move(gd));
}

// ---------------------------------------------------------------------------

Assignment hungarian(const Tensor& cost) {
  if (cost.shape().size() != 2 || cost.rows() != cost.cols()) {
    throw ShapeError("hungarian needs a square matrix, got " + shape_to_string(cost.shape()));
  }
  if (!cost.all_finite()) throw NonFiniteError("hungarian needs a finite cost matrix");
  const std::size_t n = cost.rows();
  const double inf = std::numeric_limits<double>::infinity();
  // Shortest augmenting paths with row/column potentials; 1-based with a
  // virtual column 0.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> match(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    match[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = match[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost.at(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  Assignment out;
  out.column_of_row.assign(n, 0);
  for (std::size_t j = 1; j <= n; ++j) out.column_of_row[match[j] - 1] = j - 1;
  for (std::size_t i = 0; i < n; ++i) out.cost += cost.at(i, out.column_of_row[i]);
  return out;
}

// ---------------------------------------------------------------------------

Permutation Permutation::identity(const MultiExitModel& model) {
  Permutation p;
  for (std::size_t i = 0; i < model.num_blocks(); ++i) {
    std::vector<std::size_t> layer(model.block(i).bias.size());
    std::iota(layer.begin(), layer.end(), 0);
    p.layers.push_back(std::move(layer));
  }
  return p;
}

bool Permutation::is_identity() const {
  for (const auto& layer : layers) {
    for (std::size_t j = 0; j < layer.size(); ++j) {
      if (layer[j] != j) return false;
    }
  }
  return true;
}

void Permutation::validate(const MultiExitModel& model) const {
  if (layers.size() != model.num_blocks()) throw InvalidArgument("permutation needs one map per block");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::size_t width = model.block(i).bias.size();
    if (layers[i].size() != width) throw InvalidArgument("permutation layer width mismatch");
    std::vector<bool> seen(width, false);
    for (std::size_t v : layers[i]) {
      if (v >= width || seen[v]) throw InvalidArgument("permutation layer is not a bijection");
      seen[v] = true;
    }
  }
}

MultiExitModel apply_permutation(const MultiExitModel& model, const Permutation& perm) {
  perm.validate(model);
  MultiExitModel out = model;
  for (std::size_t i = 0; i < out.num_blocks(); ++i) {
    const auto& p = perm.layers[i];
    permute_columns(out.block(i).weight, p);
    permute_vector(out.block(i).bias, p);
    if (i + 1 < out.num_blocks()) permute_rows(out.block(i + 1).weight, p);
    for (std::size_t k = 0; k < out.num_exits(); ++k) {
      if (out.placement(k) == i + 1) permute_rows(out.head(k).front().weight, p);
    }
  }
  return out;
}

double parameter_distance(const MultiExitModel& a, const MultiExitModel& b) {
  if (!same_architecture(a, b)) throw InvalidArgument("architecture mismatch");
  const auto fa = flatten_parameters(a);
  const auto fb = flatten_parameters(b);
  double s = 0.0;
  for (std::size_t i = 0; i < fa.size(); ++i) s += (fa[i] - fb[i]) * (fa[i] - fb[i]);
  return std::sqrt(s);
}

MatchResult weight_match(const MultiExitModel& a, const MultiExitModel& b, std::uint64_t seed,
                         std::size_t max_sweeps) {
  if (!same_architecture(a, b)) throw InvalidArgument("weight_match: architecture mismatch");
  MatchResult result;
  result.permutation = Permutation::identity(b);
  result.distance_before = parameter_distance(a, b);
  MultiExitModel current = b;
  CounterRng rng(seed, "weight_match/order");
  std::vector<std::size_t> order(a.num_blocks());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
    ++result.sweeps;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    bool improved = false;
    for (std::size_t layer : order) {
      const Tensor s = unit_similarity(a, current, layer);
      const std::size_t width = s.rows();
      Tensor cost({width, width}, 0.0);
      double scale = 0.0;
      double kept = 0.0;
      for (std::size_t j = 0; j < width; ++j) {
        kept += s.at(j, j);
        for (std::size_t l = 0; l < width; ++l) {
          cost.at(j, l) = -s.at(j, l);
          scale = std::max(scale, std::abs(s.at(j, l)));
        }
      }
      const Assignment assign = hungarian(cost);
      const double gain = -assign.cost - kept;
      if (!(gain > 1e-12 * std::max(1.0, scale * static_cast<double>(width)))) continue;
      improved = true;
      Permutation step = Permutation::identity(current);
      step.layers[layer] = assign.column_of_row;
      current = apply_permutation(current, step);
      auto& composed = result.permutation.layers[layer];
      const auto previous = composed;
      for (std::size_t j = 0; j < width; ++j) composed[j] = previous[assign.column_of_row[j]];
    }
    if (!improved) break;
  }
  result.distance_after = parameter_distance(a, current);
  return result;
}

// ---------------------------------------------------------------------------

MultiExitLoss evaluate_loss(const MultiExitModel& model, const Split& split, std::span<const double> alpha) {
  require_alpha(model, alpha);
  return multi_exit_loss(forward_all(model, split.features).logits, split.targets, model.task(), alpha);
}

MultiExitModel blend(const MultiExitModel& a, const MultiExitModel& b, double lambda) {
  if (!same_architecture(a, b)) throw InvalidArgument("architecture mismatch");
  const auto fa = flatten_parameters(a);
  const auto fb = flatten_parameters(b);
  std::vector<double> flat(fa.size());
  for (std::size_t i = 0; i < fa.size(); ++i) flat[i] = (1.0 - lambda) * fa[i] + lambda * fb[i];
  MultiExitModel out = a;
  assign_parameters(out, flat);
  return out;
}

ConnectivityGrid interpolate_loss(const MultiExitModel& a, const MultiExitModel& b, const Permutation& perm,
                                  std::span<const double> lambdas, const Split& split,
                                  std::span<const double> alpha) {
  require_alpha(a, alpha);
  for (double l : lambdas) {
    if (!(l >= 0.0 && l <= 1.0)) throw InvalidArgument("lambda grid must lie in [0, 1]");
  }
  const MultiExitModel aligned = apply_permutation(b, perm);
  ConnectivityGrid grid;
  grid.mode = ConnectivityMode::kPath;
  grid.u.assign(lambdas.begin(), lambdas.end());
  grid.total.resize(lambdas.size());
  grid.per_exit.resize(lambdas.size());
  grid.permutations.push_back(perm);
  parallel_for(lambdas.size(), [&](std::size_t i) {
    const double l = lambdas[i];
    MultiExitLoss loss = l == 0.0   ? evaluate_loss(a, split, alpha)
                         : l == 1.0 ? evaluate_loss(aligned, split, alpha)
                                    : evaluate_loss(blend(a, aligned, l), split, alpha);
    grid.total[i] = loss.total;
    grid.per_exit[i] = std::move(loss.per_exit);
  });
  return grid;
}

std::size_t plane_margin(std::size_t resolution) {
  if (resolution < 2) throw InvalidArgument("plane grid needs resolution >= 2");
  std::size_t p = static_cast<std::size_t>(std::lround(static_cast<double>(resolution - 1) / 6.0));
  while (p > 0 && resolution - 1 <= 2 * p) --p;
  return p;
}

double plane_coordinate(std::size_t i, std::size_t resolution) {
  const std::size_t p = plane_margin(resolution);
  return (static_cast<double>(i) - static_cast<double>(p)) / static_cast<double>(resolution - 1 - 2 * p);
}

ConnectivityGrid plane_loss(const MultiExitModel& a, const MultiExitModel& b, const MultiExitModel& c,
                            std::size_t resolution, const Split& split, std::span<const double> alpha,
                            std::uint64_t seed) {
  require_alpha(a, alpha);
  const MatchResult mb = weight_match(a, b, seed);
  const MatchResult mc = weight_match(a, c, seed + 1);
  const auto theta = flatten_parameters(a);
  const auto fb = flatten_parameters(apply_permutation(b, mb.permutation));
  const auto fc = flatten_parameters(apply_permutation(c, mc.permutation));
  std::vector<double> db(theta.size()), dc(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    db[i] = fb[i] - theta[i];
    dc[i] = fc[i] - theta[i];
  }

  ConnectivityGrid grid;
  grid.mode = ConnectivityMode::kPlane;
  grid.resolution = resolution;
  grid.permutations = {mb.permutation, mc.permutation};
  const std::size_t points = resolution * resolution;
  grid.u.resize(points);
  grid.v.resize(points);
  grid.total.resize(points);
  grid.per_exit.resize(points);
  for (std::size_t iv = 0; iv < resolution; ++iv) {
    for (std::size_t iu = 0; iu < resolution; ++iu) {
      grid.u[iv * resolution + iu] = plane_coordinate(iu, resolution);
      grid.v[iv * resolution + iu] = plane_coordinate(iv, resolution);
    }
  }
  parallel_for(points, [&](std::size_t i) {
    MultiExitLoss loss = evaluate_loss(combine(a, theta, {{grid.u[i], &db}, {grid.v[i], &dc}}), split, alpha);
    grid.total[i] = loss.total;
    grid.per_exit[i] = std::move(loss.per_exit);
  });
  return grid;
}

// ---------------------------------------------------------------------------

std::size_t numerical_rank(const Tensor& matrix, double rel_tol) {
  if (!(rel_tol >= 0.0)) throw InvalidArgument("rel_tol must be non-negative");
  const Eigen::Index n = static_cast<Eigen::Index>(matrix.rows());
  const Eigen::Index m = static_cast<Eigen::Index>(matrix.cols());
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> view(
      matrix.data().data(), n, m);
  const Eigen::MatrixXd dense = view;
  const Eigen::BDCSVD<Eigen::MatrixXd> svd(dense);
  const auto& sigma = svd.singularValues();
  if (sigma.size() == 0 || sigma(0) == 0.0) return 0;
  std::size_t rank = 0;
  for (Eigen::Index j = 0; j < sigma.size(); ++j) {
    if (sigma(j) > rel_tol * sigma(0)) ++rank;
  }
  return rank;
}

RankProfile rank_profile(const MultiExitModel& model, const Tensor& batch, double rel_tol) {
  if (batch.rows() < 2) throw InvalidArgument("rank_profile needs at least two samples");
  const ExitOutputs out = forward_all(model, batch, ForwardCapture{true});
  RankProfile profile;
  for (std::size_t i = 0; i < out.activations.size(); ++i) {
    const Tensor& act = out.activations[i];
    profile.push_back({i + 1, numerical_rank(act, rel_tol), act.rows(), act.cols(), rel_tol});
  }
  return profile;
}

double binned_pattern_entropy(const Tensor& activations, std::size_t bins) {
  if (bins < 2) throw InvalidArgument("mutual information needs at least two bins");
  const std::size_t n = activations.rows();
  const std::size_t m = activations.cols();
  if (n < 2) throw InvalidArgument("mutual information needs at least two samples");
  std::vector<std::vector<std::uint32_t>> patterns(n, std::vector<std::uint32_t>(m, 0));
  for (std::size_t c = 0; c < m; ++c) {
    double lo = activations.at(0, c);
    double hi = lo;
    for (std::size_t r = 1; r < n; ++r) {
      lo = std::min(lo, activations.at(r, c));
      hi = std::max(hi, activations.at(r, c));
    }
    if (!(hi > lo)) continue;
    const double width = (hi - lo) / static_cast<double>(bins);
    for (std::size_t r = 0; r < n; ++r) {
      const auto b = static_cast<std::size_t>((activations.at(r, c) - lo) / width);
      patterns[r][c] = static_cast<std::uint32_t>(std::min(b, bins - 1));
    }
  }
  std::map<std::vector<std::uint32_t>, std::size_t> counts;
  for (auto& p : patterns) ++counts[std::move(p)];
  double h = 0.0;
  for (const auto& [pattern, count] : counts) {
    const double q = static_cast<double>(count) / static_cast<double>(n);
    h -= q * std::log2(q);
  }
  return std::max(h, 0.0);
}

MIProfile mi_profile(const MultiExitModel& model, const Tensor& batch, std::size_t bins) {
  const ExitOutputs out = forward_all(model, batch, ForwardCapture{true});
  MIProfile profile;
  for (std::size_t i = 0; i < out.activations.size(); ++i) {
    profile.push_back({i + 1, binned_pattern_entropy(out.activations[i], bins), bins, batch.rows()});
  }
  return profile;
}

// ---------------------------------------------------------------------------

std::vector<double> filter_normalized_direction(const MultiExitModel& model, std::uint64_t seed,
                                                const std::string& stream) {
  std::vector<double> direction;
  for (const auto& ref : model.parameters()) {
    const Tensor& p = *ref.tensor;
    CounterRng rng(seed, stream + "/" + ref.name);
    Tensor d = Tensor::zeros_like(p);
    for (auto& v : d.storage()) v = rng.normal();
    if (p.shape().size() == 2) {
      for (std::size_t c = 0; c < p.cols(); ++c) {
        double pn = 0.0;
        double dn = 0.0;
        for (std::size_t r = 0; r < p.rows(); ++r) {
          pn += p.at(r, c) * p.at(r, c);
          dn += d.at(r, c) * d.at(r, c);
        }
        const double scale = dn > 0.0 ? std::sqrt(pn) / std::sqrt(dn) : 0.0;
        for (std::size_t r = 0; r < p.rows(); ++r) d.at(r, c) *= scale;
      }
    } else {
      const double dn = frobenius_norm(d);
      const double scale = dn > 0.0 ? frobenius_norm(p) / dn : 0.0;
      for (auto& v : d.storage()) v *= scale;
    }
    direction.insert(direction.end(), d.data().begin(), d.data().end());
  }
  return direction;
}

LandscapeGrid loss_landscape(const MultiExitModel& model, const Split& split, std::size_t resolution,
                             std::uint64_t seed, std::span<const double> alpha) {
  require_alpha(model, alpha);
  if (resolution == 0 || resolution % 2 == 0) throw InvalidArgument("landscape resolution must be odd");
  LandscapeGrid grid;
  grid.resolution = resolution;
  grid.delta = filter_normalized_direction(model, seed, "landscape/delta");
  grid.eta = filter_normalized_direction(model, seed, "landscape/eta");
  for (std::size_t i = 0; i < resolution; ++i) {
    grid.coords.push_back(resolution == 1 ? 0.0
                                          : -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(resolution - 1));
  }
  const auto theta = flatten_parameters(model);
  const std::size_t points = resolution * resolution;
  grid.total.resize(points);
  grid.per_exit.resize(points);
  parallel_for(points, [&](std::size_t i) {
    const double x = grid.coords[i % resolution];
    const double y = grid.coords[i / resolution];
    MultiExitLoss loss = (x == 0.0 && y == 0.0)
                             ? evaluate_loss(model, split, alpha)
                             : evaluate_loss(combine(model, theta, {{x, &grid.delta}, {y, &grid.eta}}), split, alpha);
    grid.total[i] = loss.total;
    grid.per_exit[i] = std::move(loss.per_exit);
  });
  return grid;
}

}  // namespace exitlab
