#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "exitlab/inference/inference.hpp"
#include "exitlab/multiexit/model.hpp"
#include "exitlab/regimes/regimes.hpp"
#include "exitlab/workbench/data.hpp"

namespace exitlab {

using Json = nlohmann::ordered_json;

struct DatasetConfig {
  std::string kind = "tiered-blobs";  // spirals | tiered-blobs | csv
  SyntheticSpec synthetic{};
  std::string path;  // csv only
  CsvOptions csv{};
};

struct ModelSection {
  std::size_t width = 64;
  std::size_t blocks = 6;
  // Either explicit 1-based placements or a scheme.
  std::vector<std::size_t> placements;
  std::string scheme = "every-n";  // every-n | dense-sparse | sparse-dense
  std::size_t every = 1;
  HeadSpec head{};
};

struct PolicySection {
  ExitCriterion criterion = ExitCriterion::kMaxProb;
  std::vector<Budget> budgets = default_budgets();
};

struct AnalysisSection {
  std::size_t gd_every = 5;
  std::size_t probe_size = 256;
  double rank_tol = 1e-3;
  std::size_t mi_bins = 30;
  std::size_t landscape_resolution = 51;
  std::size_t plane_resolution = 25;
  std::size_t path_points = 21;
};

struct RunConfig {
  DatasetConfig dataset{};
  ModelSection model{};
  RegimeSpec regime{};
  PolicySection policy{};
  AnalysisSection analysis{};
  std::vector<std::uint64_t> seeds{0};
  std::string output = "runs";

  void validate() const;
};

// Unknown keys, wrong types and invalid values raise ConfigError. Missing
// keys take their defaults.
RunConfig parse_run_config(const Json& j);
RunConfig load_run_config(const std::string& path);
// Every field, defaults included.
Json to_json(const RunConfig& config);

Json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const Json& j);

Dataset make_dataset(const DatasetConfig& config);
ModelConfig make_model_config(const RunConfig& config, const Dataset& data, std::uint64_t seed);

}  // namespace exitlab
