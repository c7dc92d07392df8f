#include "douap/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "douap/error.hpp"

namespace douap {

namespace {

double evaluate(const GradCheckProblem& problem, const std::vector<Tensor>& inputs, std::uint64_t trial_seed) {
  Graph g;
  std::vector<NodeId> ids;
  ids.reserve(inputs.size());
  for (const Tensor& t : inputs) ids.push_back(g.constant(t));
  const double loss = g.value(problem.build(g, ids)).item();
  if (!std::isfinite(loss)) {
    throw Error(ErrorCode::kNonFinite, "grad_check", fmt::format("non-finite loss in trial seed {}", trial_seed));
  }
  return loss;
}

}  // namespace

double gradient_error(double analytic, double numeric) {
  const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
  return std::abs(analytic - numeric) / denom;
}

double grad_check(const GradCheckProblem& problem, std::size_t trials, double eps, std::uint64_t seed) {
  if (trials < 1) throw Error(ErrorCode::kInvalidArgument, "grad_check", "trials must be >= 1");
  if (!(eps > 0.0 && eps <= 1e-3)) {
    throw Error(ErrorCode::kInvalidArgument, "grad_check", fmt::format("eps {:g} outside (0, 1e-3]", eps));
  }
  double worst = 0.0;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    const std::uint64_t trial_seed = seed + trial;
    Rng rng(trial_seed);
    std::vector<Tensor> inputs = problem.make_inputs(rng);

    Graph g;
    std::vector<NodeId> ids;
    for (const Tensor& t : inputs) ids.push_back(g.param(t));
    const NodeId loss = problem.build(g, ids);
    if (!std::isfinite(g.value(loss).item())) {
      throw Error(ErrorCode::kNonFinite, "grad_check", fmt::format("non-finite loss in trial seed {}", trial_seed));
    }
    g.backward(loss);

    for (std::size_t k = 0; k < inputs.size(); ++k) {
      std::span<const double> analytic = g.grad(ids[k]);
      for (std::size_t i = 0; i < inputs[k].size(); ++i) {
        const double saved = inputs[k][i];
        inputs[k][i] = saved + eps;
        const double up = evaluate(problem, inputs, trial_seed);
        inputs[k][i] = saved - eps;
        const double down = evaluate(problem, inputs, trial_seed);
        inputs[k][i] = saved;
        const double numeric = (up - down) / (2.0 * eps);
        worst = std::max(worst, gradient_error(analytic[i], numeric));
      }
    }
  }
  return worst;
}

}  // namespace douap
