#include "douap/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "douap/error.hpp"

namespace douap {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) { return fmt::format("[{}]", fmt::join(shape, ",")); }

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size()) {
    throw Error(ErrorCode::kShapeMismatch, "Tensor",
                fmt::format("shape {} needs {} values, got {}", shape_str(shape_), shape_size(shape_),
                            data_.size()));
  }
}

double Tensor::item() const {
  if (data_.size() != 1) {
    throw Error(ErrorCode::kNotScalar, "Tensor::item", fmt::format("shape {} is not scalar", shape_str(shape_)));
  }
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) {
    throw Error(ErrorCode::kShapeMismatch, "Tensor::reshaped",
                fmt::format("{} -> {}", shape_str(shape_), shape_str(shape)));
  }
  Tensor out(std::move(shape), data_);
  out.requires_grad_ = requires_grad_;
  return out;
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace douap
