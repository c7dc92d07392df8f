#include "douap/error.hpp"

#include <fmt/format.h>

namespace douap {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kShapeMismatch: return "shape_mismatch";
    case ErrorCode::kZeroNorm: return "zero_norm";
    case ErrorCode::kNotScalar: return "not_scalar";
    case ErrorCode::kNonFinite: return "non_finite";
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kPoolExhausted: return "pool_exhausted";
    case ErrorCode::kFormat: return "format";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kConfig: return "config";
  }
  return "unknown";
}

Error::Error(ErrorCode code, std::string where, std::string message)
    : std::runtime_error(fmt::format("{}: {}: {}", to_string(code), where, message)),
      code_(code),
      where_(std::move(where)),
      message_(std::move(message)) {}

}  // namespace douap
