#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace eegbridge {

enum class ErrorCode {
  kMissingColumn,
  kNonFiniteValue,
  kUnknownPortion,
  kEmptyFile,
  kParseError,
  kEmptyGroup,
  kDimensionMismatch,
  kInvalidArgument,
  kNotConverged,
  kNumericalOverflow,
  kNotPSD,
  kShapeMismatch,
  kNonScalarOutput,
  kMixedConditionPack,
  kNoEligibleGroups,
  kDivergenceDetected,
  kUnknownCondition,
  kInvalidConfig,
  kParticipantMismatch,
  kTooFewParticipants,
  kEmptyColumn,
  kSchemaMismatch,
  kIoError,
};

std::string_view to_string(ErrorCode code);

// Every failure raised by the library carries a machine-checkable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

}  // namespace eegbridge
