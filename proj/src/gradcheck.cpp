#include "m2m/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace m2m {
namespace {

double evaluate(const GraphFunction& f, const std::vector<Tensor<double>>& inputs) {
  Graph<double> g;
  std::vector<Var<double>> leaves;
  for (const auto& t : inputs) leaves.push_back(g.leaf(t, false));
  return f(g, leaves).value().values()[0];
}

}  // namespace

GradCheckResult grad_check(const GraphFunction& f, const std::vector<Tensor<double>>& inputs,
                           const GradCheckOptions& opts) {
  std::vector<Tensor<double>> analytic;
  {
    Graph<double> g;
    std::vector<Var<double>> leaves;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      const bool frozen = i < opts.frozen.size() && opts.frozen[i];
      leaves.push_back(g.leaf(inputs[i], !frozen));
    }
    const Var<double> out = f(g, leaves);
    if (out.value().size() != 1) throw ShapeError("grad_check: function is not scalar-valued");
    g.backward(out);
    for (const auto& v : leaves) analytic.push_back(g.has_grad(v) ? v.grad() : Tensor<double>(v.shape()));
  }

  std::mt19937_64 rng(opts.seed);
  GradCheckResult result;
  std::vector<Tensor<double>> work = inputs;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (i < opts.frozen.size() && opts.frozen[i]) continue;
    std::vector<Eigen::Index> coords(std::size_t(inputs[i].size()));
    std::iota(coords.begin(), coords.end(), Eigen::Index(0));
    if (opts.max_coords_per_input > 0 && coords.size() > opts.max_coords_per_input) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(opts.max_coords_per_input);
    }
    for (Eigen::Index k : coords) {
      const double orig = work[i].values()[k];
      work[i].values()[k] = orig + opts.step;
      const double up = evaluate(f, work);
      work[i].values()[k] = orig - opts.step;
      const double down = evaluate(f, work);
      work[i].values()[k] = orig;
      const double numeric = (up - down) / (2.0 * opts.step);
      const double a = analytic[i].values()[k];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), opts.min_scale});
      result.max_rel_error = std::max(result.max_rel_error, err);
      ++result.coordinates;
    }
  }
  return result;
}

}  // namespace m2m
