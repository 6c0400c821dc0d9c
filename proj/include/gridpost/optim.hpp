#pragma once

#include <cmath>
#include <vector>

#include "gridpost/tensor.hpp"

namespace gridpost {

template <typename Scalar>
struct AdamState {
  long long step = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
  std::vector<Vec<Scalar>> m;
  std::vector<Vec<Scalar>> v;

  static AdamState for_parameters(const std::vector<Tensor<Scalar>>& params, double lr) {
    if (!(lr > 0)) throw ConfigError("adam: learning rate must be positive");
    AdamState s;
    s.learning_rate = lr;
    for (const auto& p : params) {
      s.m.push_back(Vec<Scalar>::Zero(p.size()));
      s.v.push_back(Vec<Scalar>::Zero(p.size()));
    }
    return s;
  }
};

/// One bias-corrected Adam update; increments state.step.
template <typename Scalar>
void adam_step(std::vector<Tensor<Scalar>>& params, const std::vector<Tensor<Scalar>>& grads,
               AdamState<Scalar>& state) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw DimensionError("adam: parameter/gradient/state count mismatch");
  }
  if (!(state.beta1 > 0 && state.beta1 < 1 && state.beta2 > 0 && state.beta2 < 1)) {
    throw ConfigError("adam: betas must lie in (0,1)");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const auto c1 = static_cast<Scalar>(1.0 / (1.0 - std::pow(state.beta1, t)));
  const auto c2 = static_cast<Scalar>(1.0 / (1.0 - std::pow(state.beta2, t)));
  const auto b1 = static_cast<Scalar>(state.beta1), b2 = static_cast<Scalar>(state.beta2);
  const auto lr = static_cast<Scalar>(state.learning_rate);
  const auto eps = static_cast<Scalar>(state.epsilon);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& g = grads[i].data();
    if (g.size() != params[i].size() || state.m[i].size() != params[i].size()) {
      throw DimensionError("adam: shape mismatch for parameter " + std::to_string(i));
    }
    state.m[i] = b1 * state.m[i] + (Scalar(1) - b1) * g;
    state.v[i] = b2 * state.v[i] + (Scalar(1) - b2) * g.cwiseAbs2();
    params[i].data().array() -=
        lr * (state.m[i].array() * c1) / ((state.v[i].array() * c2).sqrt() + eps);
  }
}

}  // namespace gridpost
