#include <doctest.h>

#include <cmath>
#include <limits>

#include "douap/error.hpp"
#include "douap/grad_check.hpp"

using namespace douap;

namespace {

Tensor draw(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(-1.0, 1.0);
  return t;
}

}  // namespace

TEST_CASE("single affine layer is exact to 1e-8") {
  GradCheckProblem p{
      [](Rng& rng) { return std::vector<Tensor>{draw({3, 4}, rng), draw({4, 2}, rng), draw({2}, rng)}; },
      [](Graph& g, std::span<const NodeId> in) { return sum_all(g, g.affine(in[0], in[1], in[2])); }};
  CHECK(grad_check(p, 10, 1e-5) <= 1e-8);
}

TEST_CASE("constant output compares against a zero gradient") {
  GradCheckProblem p{[](Rng& rng) { return std::vector<Tensor>{draw({3}, rng)}; },
                     [](Graph& g, std::span<const NodeId> in) { return sum_all(g, g.sub(in[0], in[0])); }};
  CHECK(grad_check(p, 5, 1e-5) <= 1e-10);
}

TEST_CASE("argument validation") {
  GradCheckProblem p{[](Rng& rng) { return std::vector<Tensor>{draw({2}, rng)}; },
                     [](Graph& g, std::span<const NodeId> in) { return sum_all(g, in[0]); }};
  CHECK_THROWS_AS(grad_check(p, 0, 1e-5), Error);
  CHECK_THROWS_AS(grad_check(p, 1, 0.0), Error);
  CHECK_THROWS_AS(grad_check(p, 1, 2e-3), Error);
}

TEST_CASE("non-finite loss names the trial seed") {
  GradCheckProblem p{[](Rng&) { return std::vector<Tensor>{Tensor({1}, std::numeric_limits<double>::infinity())}; },
                     [](Graph& g, std::span<const NodeId> in) { return sum_all(g, in[0]); }};
  try {
    grad_check(p, 3, 1e-5, 40);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kNonFinite);
    CHECK(e.message().find("40") != std::string::npos);
  }
}

TEST_CASE("gradient error is relative above one and absolute below") {
  CHECK(gradient_error(2.0, 2.0) == 0.0);
  CHECK(gradient_error(0.0, 1e-3) == doctest::Approx(1e-3));
  CHECK(gradient_error(100.0, 101.0) == doctest::Approx(1.0 / 101.0));
}
