#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "douap/autodiff.hpp"
#include "douap/rng.hpp"

namespace douap {

/// A differentiable scalar function of a list of leaf tensors. `make_inputs`
/// draws the leaves for one trial; `build` records the graph on top of them and
/// returns the scalar loss node.
struct GradCheckProblem {
  std::function<std::vector<Tensor>(Rng&)> make_inputs;
  std::function<NodeId(Graph&, std::span<const NodeId>)> build;
};

/// |a - n| / max(1, |a|, |n|): relative for large entries, absolute near zero.
double gradient_error(double analytic, double numeric);

/// Worst gradient_error between backward() and central differences over
/// `trials` draws. Trial t uses Rng(seed + t).
double grad_check(const GradCheckProblem& problem, std::size_t trials, double eps, std::uint64_t seed = 0);

}  // namespace douap
