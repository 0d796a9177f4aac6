#include "exitlab/workbench/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "exitlab/errors.hpp"
#include "exitlab/numerics/rng.hpp"

namespace exitlab {

namespace {

constexpr double kPi = 3.14159265358979323846;

void shuffle(std::vector<std::size_t>& v, CounterRng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

Split take(const std::vector<double>& x, const std::vector<double>& y, std::size_t d,
           const std::vector<std::size_t>& rows) {
  if (rows.empty()) throw InvalidArgument("split would be empty; use more samples");
  Split s;
  std::vector<double> feats;
  feats.reserve(rows.size() * d);
  for (std::size_t r : rows) {
    feats.insert(feats.end(), x.begin() + static_cast<std::ptrdiff_t>(r * d),
                 x.begin() + static_cast<std::ptrdiff_t>((r + 1) * d));
    s.targets.push_back(y[r]);
  }
  s.features = Tensor({rows.size(), d}, std::move(feats));
  return s;
}

std::size_t nearest(const std::vector<std::vector<double>>& centroids, std::span<const double> p) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    double d = 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) d += (p[j] - centroids[c][j]) * (p[j] - centroids[c][j]);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

void spiral_point(std::size_t cls, const SyntheticSpec& spec, CounterRng& rng, double* out) {
  const double t = rng.uniform(0.05, 1.0);
  const double angle = 3.0 * kPi * t + 2.0 * kPi * static_cast<double>(cls) / static_cast<double>(spec.classes);
  out[0] = t * std::cos(angle) + spec.noise * 0.1 * rng.normal();
  out[1] = t * std::sin(angle) + spec.noise * 0.1 * rng.normal();
  for (std::size_t j = 2; j < spec.dim; ++j) out[j] = spec.noise * 0.1 * rng.normal();
}

void blob_point(std::size_t cls, const SyntheticSpec& spec, const std::vector<std::vector<double>>& centroids,
                CounterRng& rng, double* out) {
  const double tier = rng.uniform();
  double lo = 0.0;
  double hi = 0.05;
  if (tier >= 1.0 - spec.hard_fraction) {
    lo = 0.35;
    hi = 0.48;
  } else if (tier >= spec.easy_fraction) {
    lo = 0.15;
    hi = 0.3;
  }
  std::vector<double> base = centroids[cls];
  // The base point moves towards another class's centroid but must stay in
  // its own Voronoi cell, so noise-free data stays linearly separable.
  for (int attempt = 0; attempt < 256; ++attempt) {
    std::size_t other = static_cast<std::size_t>(rng.below(spec.classes - 1));
    if (other >= cls) ++other;
    const double t = rng.uniform(lo, hi);
    std::vector<double> cand(spec.dim);
    for (std::size_t j = 0; j < spec.dim; ++j) cand[j] = centroids[cls][j] + t * (centroids[other][j] - centroids[cls][j]);
    if (nearest(centroids, cand) == cls) {
      base = std::move(cand);
      break;
    }
  }
  for (std::size_t j = 0; j < spec.dim; ++j) out[j] = base[j] + spec.noise * rng.normal();
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) {
    const auto b = field.find_first_not_of(" \t\r");
    const auto e = field.find_last_not_of(" \t\r");
    fields.push_back(b == std::string::npos ? "" : field.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

}  // namespace

std::string to_string(SyntheticKind kind) {
  return kind == SyntheticKind::kSpirals ? "spirals" : "tiered-blobs";
}

SyntheticKind parse_synthetic_kind(const std::string& name) {
  if (name == "spirals") return SyntheticKind::kSpirals;
  if (name == "tiered-blobs") return SyntheticKind::kTieredBlobs;
  throw ConfigError("unknown synthetic dataset '" + name + "'");
}

void SyntheticSpec::validate() const {
  if (classes < 2) throw InvalidArgument("synthetic data needs at least two classes");
  if (samples < 3 * classes) throw InvalidArgument("synthetic data needs at least 3 samples per class");
  if (dim < 1 || (kind == SyntheticKind::kSpirals && dim < 2)) throw InvalidArgument("dimension too small");
  if (!(noise >= 0.0) || !std::isfinite(noise)) throw InvalidArgument("noise must be finite and >= 0");
  if (easy_fraction < 0.0 || hard_fraction < 0.0 || easy_fraction + hard_fraction > 1.0) {
    throw InvalidArgument("tier fractions must be non-negative and sum to at most 1");
  }
}

std::array<std::size_t, 3> split_sizes(std::size_t n, const SplitFractions& fractions) {
  const double sum = fractions[0] + fractions[1] + fractions[2];
  for (double f : fractions) {
    if (!(f >= 0.0)) throw InvalidArgument("split fractions must be non-negative");
  }
  if (std::abs(sum - 1.0) > 1e-9) throw InvalidArgument("split fractions must sum to 1");
  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> rem{};
  std::size_t used = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double exact = fractions[i] * static_cast<double>(n);
    sizes[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    rem[i] = exact - static_cast<double>(sizes[i]);
    used += sizes[i];
  }
  for (std::size_t left = n - used; left > 0; --left) {
    std::size_t pick = 0;
    for (std::size_t i = 1; i < 3; ++i) {
      if (rem[i] >= rem[pick] - 1e-9) pick = i;
    }
    ++sizes[pick];
    rem[pick] = -1.0;
  }
  return sizes;
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const std::size_t n = spec.samples;
  const std::size_t d = spec.dim;
  std::vector<std::vector<double>> centroids;
  if (spec.kind == SyntheticKind::kTieredBlobs) {
    CounterRng crng(spec.seed, "tiered-blobs/centroids");
    for (std::size_t c = 0; c < spec.classes; ++c) {
      std::vector<double> mu(d);
      for (auto& v : mu) v = 3.0 * crng.normal();
      centroids.push_back(std::move(mu));
    }
  }
  std::vector<double> x(n * d);
  std::vector<double> y(n);
  std::vector<std::vector<std::size_t>> by_class(spec.classes);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t cls = i % spec.classes;
    CounterRng rng(spec.seed, to_string(spec.kind) + "/sample/" + std::to_string(i));
    if (spec.kind == SyntheticKind::kSpirals) {
      spiral_point(cls, spec, rng, &x[i * d]);
    } else {
      blob_point(cls, spec, centroids, rng, &x[i * d]);
    }
    y[i] = static_cast<double>(cls);
    by_class[cls].push_back(i);
  }

  // Stratify: shuffle within classes, deal classes round-robin, cut the
  // sequence into train/val/test. Any contiguous run is class-balanced to ±1.
  CounterRng srng(spec.seed, "split");
  for (auto& members : by_class) shuffle(members, srng);
  std::vector<std::size_t> order;
  for (std::size_t r = 0; order.size() < n; ++r) {
    for (const auto& members : by_class) {
      if (r < members.size()) order.push_back(members[r]);
    }
  }
  const auto sizes = split_sizes(n, kDefaultFractions);
  std::array<std::vector<std::size_t>, 3> parts;
  std::size_t pos = 0;
  for (std::size_t s = 0; s < 3; ++s) {
    parts[s].assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                    order.begin() + static_cast<std::ptrdiff_t>(pos + sizes[s]));
    shuffle(parts[s], srng);
    pos += sizes[s];
  }

  Dataset data;
  data.task = Task::classification(spec.classes);
  data.train = take(x, y, d, parts[0]);
  data.val = take(x, y, d, parts[1]);
  data.test = take(x, y, d, parts[2]);
  std::ostringstream prov;
  prov << to_string(spec.kind) << "(n=" << n << ",d=" << d << ",C=" << spec.classes << ",noise=" << spec.noise
       << ",seed=" << spec.seed << ")";
  data.provenance = prov.str();
  return data;
}

Dataset parse_csv_dataset(const std::string& text, const CsvOptions& options, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (header.empty() && std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") != std::string::npos) header = split_fields(line);
  }
  if (header.empty()) throw IoError(source + ": empty CSV");
  const auto it = std::find(header.begin(), header.end(), options.label_column);
  if (it == header.end()) throw ConfigError(source + ": label column '" + options.label_column + "' not found");
  const std::size_t label_idx = static_cast<std::size_t>(it - header.begin());
  const std::size_t cols = header.size();
  const std::size_t d = cols - 1;
  if (d == 0) throw IoError(source + ": CSV has no feature columns");

  std::vector<double> x;
  std::vector<double> y;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto fields = split_fields(line);
    if (fields.size() != cols) {
      throw IoError(source + ":" + std::to_string(line_no) + ": expected " + std::to_string(cols) + " fields, got " +
                    std::to_string(fields.size()));
    }
    for (std::size_t c = 0; c < cols; ++c) {
      const std::string& f = fields[c];
      char* end = nullptr;
      const double v = f.empty() ? 0.0 : std::strtod(f.c_str(), &end);
      if (f.empty() || end != f.c_str() + f.size() || !std::isfinite(v)) {
        throw IoError(source + ":" + std::to_string(line_no) + ": non-numeric cell '" + f + "' in column '" +
                      header[c] + "'");
      }
      (c == label_idx ? y : x).push_back(v);
    }
  }
  const std::size_t n = y.size();
  if (n == 0) throw IoError(source + ": CSV has no data rows");

  Dataset data;
  if (options.regression) {
    data.task = Task::regression();
  } else {
    double max_label = 0.0;
    for (double v : y) {
      if (v < 0.0 || v != std::floor(v)) throw IoError(source + ": class labels must be non-negative integers");
      max_label = std::max(max_label, v);
    }
    data.task = Task::classification(std::max<std::size_t>(2, static_cast<std::size_t>(max_label) + 1));
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  CounterRng rng(options.seed, "csv/split");
  shuffle(order, rng);
  const auto sizes = split_sizes(n, options.fractions);
  std::array<std::vector<std::size_t>, 3> parts;
  std::size_t pos = 0;
  for (std::size_t s = 0; s < 3; ++s) {
    parts[s].assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                    order.begin() + static_cast<std::ptrdiff_t>(pos + sizes[s]));
    pos += sizes[s];
  }

  // Standardise with training statistics only (population std).
  std::vector<double> mean(d, 0.0), scale(d, 1.0);
  for (std::size_t j = 0; j < d; ++j) {
    double s = 0.0;
    for (std::size_t r : parts[0]) s += x[r * d + j];
    mean[j] = s / static_cast<double>(parts[0].size());
    double v = 0.0;
    for (std::size_t r : parts[0]) v += (x[r * d + j] - mean[j]) * (x[r * d + j] - mean[j]);
    const double sd = std::sqrt(v / static_cast<double>(parts[0].size()));
    scale[j] = sd > 0.0 ? sd : 1.0;
  }
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < d; ++j) x[r * d + j] = (x[r * d + j] - mean[j]) / scale[j];
  }

  data.train = take(x, y, d, parts[0]);
  data.val = take(x, y, d, parts[1]);
  data.test = take(x, y, d, parts[2]);
  data.provenance = "csv(" + source + ",label=" + options.label_column + ",seed=" + std::to_string(options.seed) + ")";
  return data;
}

Dataset load_csv_dataset(const std::string& path, const CsvOptions& options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_csv_dataset(buf.str(), options, path);
}

}  // namespace exitlab
