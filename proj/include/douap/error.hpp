#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace douap {

enum class ErrorCode {
  kShapeMismatch,
  kZeroNorm,
  kNotScalar,
  kNonFinite,
  kInvalidArgument,
  kPoolExhausted,
  kFormat,
  kIo,
  kConfig,
};

std::string_view to_string(ErrorCode code);

/// Structured error carried by every failure in the library. `what()` is a
/// single line of the form `<code>: <where>: <message>`.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string where, std::string message);

  ErrorCode code() const noexcept { return code_; }
  const std::string& where() const noexcept { return where_; }
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorCode code_;
  std::string where_;
  std::string message_;
};

}  // namespace douap
