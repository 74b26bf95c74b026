#pragma once

#include <stdexcept>
#include <string>

namespace featreg {

enum class ErrorCode {
  BadMagic,
  BadHeader,
  TruncatedPayload,
  IoFailure,
  InvariantViolation,
  DegenerateVolume,
  SizeTooSmall,
  EmptyStack,
  RankDeficient,
  DimensionMismatch,
  EmptyCostVolume,
  EmptyMovingLesion,
  FieldTooSmall,
  InvalidArgument,
  NumericFailure,
};

const char* to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace featreg
