#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "m2m/graph.hpp"

namespace m2m {

/// Builds a scalar-valued graph from leaves bound to the supplied inputs.
using GraphFunction = std::function<Var<double>(Graph<double>&, const std::vector<Var<double>>&)>;

struct GradCheckOptions {
  double step = 1e-5;
  /// 0 checks every coordinate; otherwise a seeded random subset per input.
  std::size_t max_coords_per_input = 0;
  std::uint64_t seed = 0;
  /// Inputs (by position) excluded from checking; they still enter the graph.
  std::vector<bool> frozen;
  /// Denominator floor: gradients smaller than this are compared in absolute
  /// terms, so coordinates whose true gradient is 0 (a bias feeding batch
  /// norm) do not turn rounding noise into a large relative error.
  double min_scale = 1e-6;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
};

/// Central finite differences against reverse-mode gradients at 64-bit precision.
/// Error per coordinate: |analytic − numeric| / max(|analytic|, |numeric|, min_scale).
GradCheckResult grad_check(const GraphFunction& f, const std::vector<Tensor<double>>& inputs,
                           const GradCheckOptions& opts = {});

}  // namespace m2m
