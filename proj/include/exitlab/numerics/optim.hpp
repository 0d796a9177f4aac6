#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>

#include "exitlab/numerics/graph.hpp"
#include "exitlab/numerics/tensor.hpp"

namespace exitlab {

struct ParamRef {
  std::string name;
  Tensor* tensor;
};

struct ConstParamRef {
  std::string name;
  const Tensor* tensor;
};

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
};

// Moments are keyed by parameter name; parameters never passed to a step
// keep whatever moments they were registered with (zeros).
struct AdamWState {
  AdamWConfig config;
  std::map<std::string, Tensor> first_moment;
  std::map<std::string, Tensor> second_moment;
  std::uint64_t step = 0;

  explicit AdamWState(AdamWConfig cfg = {});
  void register_params(std::span<const ParamRef> params);
};

// One AdamW update with decoupled weight decay:
//   p <- p * (1 - lr * wd), then the bias-corrected Adam step.
// Every entry of `params` must have a gradient in `grads`.
void adamw_step(AdamWState& state, std::span<const ParamRef> params, const GradientMap& grads,
                double lr);

// Cosine annealing with warm restarts. Periods are measured in optimizer
// steps: T_0, T_0*T_mult, T_0*T_mult^2, ...
struct LrSchedule {
  double max_lr = 1e-3;
  double min_lr = 0.0;
  std::uint64_t first_period = 100;
  std::uint64_t period_mult = 1;

  void validate() const;
};

double lr_at(const LrSchedule& schedule, std::uint64_t step);

}  // namespace exitlab
