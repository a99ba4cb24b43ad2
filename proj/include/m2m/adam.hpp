#pragma once

#include <cmath>
#include <vector>

#include "m2m/tensor.hpp"

namespace m2m {

template <typename Scalar>
struct AdamState {
  using Values = typename Tensor<Scalar>::Values;

  std::vector<Values> first_moment;
  std::vector<Values> second_moment;
  long step = 0;
  double learning_rate = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update of every parameter from its gradient.
/// Moments are allocated on the first call.
template <typename Scalar>
void adam_step(std::vector<Tensor<Scalar>>& params, const std::vector<Tensor<Scalar>>& grads,
               AdamState<Scalar>& state) {
  if (params.size() != grads.size()) throw ShapeError("adam_step: parameter/gradient count mismatch");
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.push_back(Tensor<Scalar>::Values::Zero(p.size()));
      state.second_moment.push_back(Tensor<Scalar>::Values::Zero(p.size()));
    }
  }
  if (state.first_moment.size() != params.size()) throw ShapeError("adam_step: state/parameter count mismatch");

  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, double(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, double(state.step));
  const Scalar b1 = Scalar(state.beta1), b2 = Scalar(state.beta2);
  const Scalar step_size = Scalar(state.learning_rate / c1);
  const Scalar root_c2 = Scalar(std::sqrt(c2));
  const Scalar eps = Scalar(state.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& g = grads[i].values();
    if (g.size() != params[i].size()) throw ShapeError("adam_step: gradient shape mismatch");
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.square();
    if (state.learning_rate == 0.0) continue;
    params[i].values() -= step_size * m / (v.sqrt() / root_c2 + eps);
  }
}

}  // namespace m2m
