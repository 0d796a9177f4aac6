#include "exitlab/workbench/config.hpp"

#include <fstream>
#include <set>

#include "exitlab/errors.hpp"

namespace exitlab {

namespace {

// Reads typed fields from one JSON object and rejects keys nobody asked for.
class Section {
 public:
  Section(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(where(key) + " has the wrong type");
    }
  }

  const Json* child(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string where(const std::string& key = {}) const {
    if (key.empty()) return path_.empty() ? "config" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.contains(item.key())) throw ConfigError("unknown key '" + where(item.key()) + "'");
    }
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename Fn>
auto rethrow_as_config(const std::string& where, Fn fn) {
  try {
    return fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

Json budget_json(const Budget& b) {
  if (!b) return "unlimited";
  return *b * 100.0;
}

PlacementScheme parse_scheme(const std::string& name) {
  if (name == "every-n") return PlacementScheme::kEveryN;
  if (name == "dense-sparse") return PlacementScheme::kDenseSparse;
  if (name == "sparse-dense") return PlacementScheme::kSparseDense;
  throw ConfigError("unknown placement scheme '" + name + "'");
}

}  // namespace

void RunConfig::validate() const {
  if (dataset.kind == "csv") {
    if (dataset.path.empty()) throw ConfigError("dataset.path is required for csv data");
    if (dataset.csv.label_column.empty()) throw ConfigError("dataset.label_column is required for csv data");
  } else {
    rethrow_as_config("dataset", [&] {
      parse_synthetic_kind(dataset.kind);
      dataset.synthetic.validate();
      return 0;
    });
  }
  if (model.width == 0 || model.blocks == 0) throw ConfigError("model.width and model.blocks must be positive");
  if (model.placements.empty()) {
    parse_scheme(model.scheme);
    if (model.every == 0) throw ConfigError("model.every must be positive");
  }
  rethrow_as_config("model.head", [&] {
    model.head.validate();
    return 0;
  });
  rethrow_as_config("regime", [&] {
    regime.validate();
    return 0;
  });
  if (policy.budgets.empty()) throw ConfigError("policy.budgets must not be empty");
  for (const auto& b : policy.budgets) {
    if (b && !(*b > 0.0 && *b <= 1.0)) throw ConfigError("policy.budgets must lie in (0, 100]");
  }
  if (seeds.empty()) throw ConfigError("seeds must not be empty");
  if (analysis.landscape_resolution % 2 == 0) throw ConfigError("analysis.landscape_resolution must be odd");
  if (analysis.plane_resolution < 2 || analysis.path_points < 2) throw ConfigError("analysis grids need >= 2 points");
  if (analysis.mi_bins < 2) throw ConfigError("analysis.mi_bins must be at least 2");
  if (analysis.probe_size < 2 || analysis.gd_every == 0) throw ConfigError("analysis probe settings out of range");
}

RunConfig parse_run_config(const Json& j) {
  RunConfig cfg;
  Section root(j, "");

  if (const Json* d = root.child("dataset")) {
    Section s(*d, "dataset");
    auto& syn = cfg.dataset.synthetic;
    s.get("kind", cfg.dataset.kind);
    s.get("samples", syn.samples);
    s.get("dim", syn.dim);
    s.get("classes", syn.classes);
    s.get("noise", syn.noise);
    s.get("seed", syn.seed);
    s.get("easy_fraction", syn.easy_fraction);
    s.get("hard_fraction", syn.hard_fraction);
    s.get("path", cfg.dataset.path);
    s.get("label_column", cfg.dataset.csv.label_column);
    s.get("regression", cfg.dataset.csv.regression);
    std::vector<double> fractions(cfg.dataset.csv.fractions.begin(), cfg.dataset.csv.fractions.end());
    s.get("fractions", fractions);
    if (fractions.size() != 3) throw ConfigError("dataset.fractions needs three entries");
    std::copy(fractions.begin(), fractions.end(), cfg.dataset.csv.fractions.begin());
    cfg.dataset.csv.seed = syn.seed;
    s.finish();
    if (cfg.dataset.kind != "csv") syn.kind = parse_synthetic_kind(cfg.dataset.kind);
  }

  if (const Json* m = root.child("model")) {
    Section s(*m, "model");
    s.get("width", cfg.model.width);
    s.get("blocks", cfg.model.blocks);
    s.get("placements", cfg.model.placements);
    s.get("scheme", cfg.model.scheme);
    s.get("every", cfg.model.every);
    if (const Json* h = s.child("head")) {
      Section hs(*h, "model.head");
      hs.get("depth", cfg.model.head.depth);
      hs.get("hidden", cfg.model.head.hidden);
      hs.finish();
    }
    s.finish();
  }

  if (const Json* r = root.child("regime")) {
    Section s(*r, "regime");
    std::string kind = to_string(cfg.regime.kind);
    std::string scaling = to_string(cfg.regime.scaling);
    auto& t = cfg.regime.train;
    s.get("kind", kind);
    s.get("scaling", scaling);
    s.get("batch_size", t.batch_size);
    s.get("max_lr", t.max_lr);
    s.get("min_lr", t.min_lr);
    s.get("restart_epochs", t.restart_epochs);
    s.get("restart_mult", t.restart_mult);
    s.get("max_epochs", t.max_epochs);
    s.get("patience", t.patience);
    s.get("weight_decay", t.adamw.weight_decay);
    s.get("beta1", t.adamw.beta1);
    s.get("beta2", t.adamw.beta2);
    s.get("epsilon", t.adamw.epsilon);
    s.finish();
    cfg.regime.kind = parse_regime(kind);
    cfg.regime.scaling = parse_scaling(scaling);
  }

  if (const Json* p = root.child("policy")) {
    Section s(*p, "policy");
    std::string criterion = to_string(cfg.policy.criterion);
    s.get("criterion", criterion);
    cfg.policy.criterion = parse_criterion(criterion);
    if (const Json* b = s.child("budgets")) {
      if (!b->is_array()) throw ConfigError("policy.budgets must be an array");
      cfg.policy.budgets.clear();
      for (const auto& item : *b) {
        if (item.is_string() && item.get<std::string>() == "unlimited") {
          cfg.policy.budgets.push_back(std::nullopt);
        } else if (item.is_number()) {
          cfg.policy.budgets.push_back(item.get<double>() / 100.0);
        } else {
          throw ConfigError("policy.budgets entries are percentages or \"unlimited\"");
        }
      }
    }
    s.finish();
  }

  if (const Json* a = root.child("analysis")) {
    Section s(*a, "analysis");
    auto& an = cfg.analysis;
    s.get("gd_every", an.gd_every);
    s.get("probe_size", an.probe_size);
    s.get("rank_tol", an.rank_tol);
    s.get("mi_bins", an.mi_bins);
    s.get("landscape_resolution", an.landscape_resolution);
    s.get("plane_resolution", an.plane_resolution);
    s.get("path_points", an.path_points);
    s.finish();
  }

  root.get("seeds", cfg.seeds);
  root.get("output", cfg.output);
  root.finish();
  cfg.regime.train.seed = cfg.seeds.empty() ? 0 : cfg.seeds.front();
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return parse_run_config(j);
}

Json to_json(const RunConfig& c) {
  const auto& syn = c.dataset.synthetic;
  const auto& t = c.regime.train;
  Json budgets = Json::array();
  for (const auto& b : c.policy.budgets) budgets.push_back(budget_json(b));
  Json dataset = {{"kind", c.dataset.kind}};
  if (c.dataset.kind == "csv") {
    dataset["path"] = c.dataset.path;
    dataset["label_column"] = c.dataset.csv.label_column;
    dataset["regression"] = c.dataset.csv.regression;
    dataset["fractions"] = c.dataset.csv.fractions;
    dataset["seed"] = c.dataset.csv.seed;
  } else {
    dataset["samples"] = syn.samples;
    dataset["dim"] = syn.dim;
    dataset["classes"] = syn.classes;
    dataset["noise"] = syn.noise;
    dataset["seed"] = syn.seed;
    dataset["easy_fraction"] = syn.easy_fraction;
    dataset["hard_fraction"] = syn.hard_fraction;
  }
  Json model = {{"width", c.model.width}, {"blocks", c.model.blocks}};
  if (!c.model.placements.empty()) {
    model["placements"] = c.model.placements;
  } else {
    model["scheme"] = c.model.scheme;
    model["every"] = c.model.every;
  }
  model["head"] = {{"depth", c.model.head.depth}, {"hidden", c.model.head.hidden}};
  return {
      {"dataset", dataset},
      {"model", model},
      {"regime",
       {{"kind", to_string(c.regime.kind)},
        {"scaling", to_string(c.regime.scaling)},
        {"batch_size", t.batch_size},
        {"max_lr", t.max_lr},
        {"min_lr", t.min_lr},
        {"restart_epochs", t.restart_epochs},
        {"restart_mult", t.restart_mult},
        {"max_epochs", t.max_epochs},
        {"patience", t.patience},
        {"weight_decay", t.adamw.weight_decay},
        {"beta1", t.adamw.beta1},
        {"beta2", t.adamw.beta2},
        {"epsilon", t.adamw.epsilon}}},
      {"policy", {{"criterion", to_string(c.policy.criterion)}, {"budgets", budgets}}},
      {"analysis",
       {{"gd_every", c.analysis.gd_every},
        {"probe_size", c.analysis.probe_size},
        {"rank_tol", c.analysis.rank_tol},
        {"mi_bins", c.analysis.mi_bins},
        {"landscape_resolution", c.analysis.landscape_resolution},
        {"plane_resolution", c.analysis.plane_resolution},
        {"path_points", c.analysis.path_points}}},
      {"seeds", c.seeds},
      {"output", c.output},
  };
}

Json to_json(const ModelConfig& c) {
  return {
      {"input_dim", c.backbone.input_dim},
      {"width", c.backbone.width},
      {"blocks", c.backbone.blocks},
      {"placements", c.placements},
      {"head_depth", c.head.depth},
      {"head_hidden", c.head.hidden},
      {"task", c.task.is_classification() ? "classification" : "regression"},
      {"classes", c.task.num_classes},
      {"seed", c.seed},
  };
}

ModelConfig model_config_from_json(const Json& j) {
  ModelConfig c;
  Section s(j, "model");
  std::string task = "classification";
  s.get("input_dim", c.backbone.input_dim);
  s.get("width", c.backbone.width);
  s.get("blocks", c.backbone.blocks);
  s.get("placements", c.placements);
  s.get("head_depth", c.head.depth);
  s.get("head_hidden", c.head.hidden);
  s.get("task", task);
  s.get("classes", c.task.num_classes);
  s.get("seed", c.seed);
  s.finish();
  if (task == "classification") {
    c.task = Task::classification(c.task.num_classes);
  } else if (task == "regression") {
    c.task = Task::regression();
  } else {
    throw ConfigError("unknown task '" + task + "'");
  }
  rethrow_as_config("model", [&] {
    c.validate();
    return 0;
  });
  return c;
}

Dataset make_dataset(const DatasetConfig& config) {
  if (config.kind == "csv") return load_csv_dataset(config.path, config.csv);
  SyntheticSpec spec = config.synthetic;
  spec.kind = parse_synthetic_kind(config.kind);
  return generate_synthetic(spec);
}

ModelConfig make_model_config(const RunConfig& config, const Dataset& data, std::uint64_t seed) {
  ModelConfig m;
  m.backbone = {data.feature_dim(), config.model.width, config.model.blocks};
  m.placements = config.model.placements.empty()
                     ? rethrow_as_config("model", [&] {
                         return placement_scheme(parse_scheme(config.model.scheme), config.model.blocks,
                                                 config.model.every);
                       })
                     : config.model.placements;
  m.head = config.model.head;
  m.task = data.task;
  m.seed = seed;
  rethrow_as_config("model", [&] {
    m.validate();
    return 0;
  });
  return m;
}

}  // namespace exitlab
