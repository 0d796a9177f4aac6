#include "exitlab/numerics/optim.hpp"

#include <cmath>
#include <numbers>

#include "exitlab/errors.hpp"

namespace exitlab {

AdamWState::AdamWState(AdamWConfig cfg) : config(cfg) {
  if (!(config.beta1 >= 0.0 && config.beta1 < 1.0 && config.beta2 >= 0.0 && config.beta2 < 1.0)) {
    throw InvalidArgument("AdamW betas must lie in [0, 1)");
  }
  if (!(config.epsilon > 0.0) || !(config.weight_decay >= 0.0)) {
    throw InvalidArgument("AdamW needs epsilon > 0 and weight_decay >= 0");
  }
}

void AdamWState::register_params(std::span<const ParamRef> params) {
  for (const auto& p : params) {
    first_moment.try_emplace(p.name, Tensor::zeros_like(*p.tensor));
    second_moment.try_emplace(p.name, Tensor::zeros_like(*p.tensor));
  }
}

void adamw_step(AdamWState& state, std::span<const ParamRef> params, const GradientMap& grads,
                double lr) {
  if (!(lr >= 0.0)) throw InvalidArgument("learning rate must be non-negative");
  for (const auto& p : params) {
    auto it = grads.find(p.name);
    if (it == grads.end()) throw InvalidArgument("no gradient for parameter '" + p.name + "'");
    if (!it->second.same_shape(*p.tensor)) {
      throw ShapeError("gradient shape for '" + p.name + "' does not match the parameter");
    }
    if (!it->second.all_finite()) {
      throw NonFiniteError("non-finite gradient for parameter '" + p.name + "'");
    }
  }

  state.register_params(params);
  state.step += 1;
  const auto& cfg = state.config;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(cfg.beta1, t);
  const double bias2 = 1.0 - std::pow(cfg.beta2, t);
  const double decay = 1.0 - lr * cfg.weight_decay;

  for (const auto& p : params) {
    const Tensor& g = grads.at(p.name);
    Tensor& m = state.first_moment.at(p.name);
    Tensor& v = state.second_moment.at(p.name);
    auto w = p.tensor->data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] *= decay;
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bias1;
      const double v_hat = v[i] / bias2;
      w[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
  }
}

void LrSchedule::validate() const {
  if (!(max_lr >= min_lr && min_lr >= 0.0)) throw InvalidArgument("schedule needs max_lr >= min_lr >= 0");
  if (first_period < 1 || period_mult < 1) throw InvalidArgument("schedule needs T_0 >= 1 and T_mult >= 1");
}

double lr_at(const LrSchedule& schedule, std::uint64_t step) {
  std::uint64_t period = schedule.first_period;
  std::uint64_t t_cur = step;
  if (schedule.period_mult == 1) {
    t_cur = step % period;
  } else {
    while (t_cur >= period) {
      t_cur -= period;
      period *= schedule.period_mult;
    }
  }
  const double phase = std::numbers::pi * static_cast<double>(t_cur) / static_cast<double>(period);
  return schedule.min_lr + (schedule.max_lr - schedule.min_lr) * (1.0 + std::cos(phase)) / 2.0;
}

}  // namespace exitlab
