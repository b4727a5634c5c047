#pragma once

// Adam with decoupled weight decay. The decay multiplies the parameter by
// (1 - lr*wd) before the bias-corrected Adam delta is applied.

#include <cmath>
#include <cstdint>
#include <vector>

#include "cthgr/autodiff.hpp"
#include "cthgr/common.hpp"

namespace cthgr {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
};

template <typename T>
struct AdamState {
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;
  long step = 0;

  template <typename ParamPtrs>
  static AdamState init(const ParamPtrs& params) {
    AdamState st;
    for (const auto* p : params) {
      st.first_moment.emplace_back(p->size(), T(0));
      st.second_moment.emplace_back(p->size(), T(0));
    }
    return st;
  }
};

// One optimizer step over `params`; consumes and clears their gradients.
// `lr` overrides config.learning_rate so schedules can anneal per epoch.
template <typename T>
inline void adam_step(const std::vector<Tensor<T>*>& params, AdamState<T>& state,
                      const AdamConfig& cfg, double lr) {
  require(lr > 0.0, "adam_step: learning rate must be positive");
  require(state.first_moment.size() == params.size(), "adam state/parameter count mismatch");
  state.step += 1;
  const double b1 = cfg.beta1, b2 = cfg.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  const double decay = 1.0 - lr * cfg.weight_decay;

  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor<T>& p = *params[pi];
    if (!p.has_grad()) continue;  // parameter untouched by this step's graph
    auto& m = state.first_moment[pi];
    auto& v = state.second_moment[pi];
    require(m.size() == p.size(), "adam moment shape mismatch");
    auto& val = p.value_mut();
    const auto& g = p.grad();
    for (std::size_t i = 0; i < val.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      m[i] = static_cast<T>(b1 * m[i] + (1.0 - b1) * gi);
      v[i] = static_cast<T>(b2 * v[i] + (1.0 - b2) * gi * gi);
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      double x = static_cast<double>(val[i]) * decay;
      x -= lr * mhat / (std::sqrt(vhat) + cfg.epsilon);
      val[i] = static_cast<T>(x);
    }
    p.zero_grad();
  }
}

template <typename T>
inline void adam_step(const std::vector<Tensor<T>*>& params, AdamState<T>& state,
                      const AdamConfig& cfg) {
  adam_step(params, state, cfg, cfg.learning_rate);
}

// Learning-rate schedule: constant for the first `anneal_after` epochs, then
// linear decay toward zero (the value hits zero one epoch past the last).
// `step_decay` switches to a x0.1 step at the annealing point instead.
inline double scheduled_lr(double base, int epoch, int total_epochs, int anneal_after,
                           bool step_decay = false) {
  if (epoch <= anneal_after || total_epochs <= anneal_after) return base;
  if (step_decay) return base * 0.1;
  const int decay_span = total_epochs - anneal_after;
  return base * static_cast<double>(total_epochs + 1 - epoch) / static_cast<double>(decay_span);
}

}  // namespace cthgr
