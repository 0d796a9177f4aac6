#pragma once

#include <string>
#include <vector>

#include "exitlab/multiexit/model.hpp"
#include "exitlab/numerics/tensor.hpp"

namespace exitlab {

struct Split {
  Tensor features;              // n × d
  std::vector<double> targets;  // class ids or scalar targets

  std::size_t size() const { return targets.size(); }
};

struct Dataset {
  Split train;
  Split val;  // early-stopping validation; also used for budget calibration
  Split test;
  Task task;
  std::string provenance;

  std::size_t feature_dim() const { return train.features.cols(); }
};

}  // namespace exitlab
