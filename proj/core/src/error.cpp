#include "eegbridge/error.hpp"

namespace eegbridge {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kMissingColumn: return "MissingColumn";
    case ErrorCode::kNonFiniteValue: return "NonFiniteValue";
    case ErrorCode::kUnknownPortion: return "UnknownPortion";
    case ErrorCode::kEmptyFile: return "EmptyFile";
    case ErrorCode::kParseError: return "ParseError";
    case ErrorCode::kEmptyGroup: return "EmptyGroup";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kNotConverged: return "NotConverged";
    case ErrorCode::kNumericalOverflow: return "NumericalOverflow";
    case ErrorCode::kNotPSD: return "NotPSD";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kNonScalarOutput: return "NonScalarOutput";
    case ErrorCode::kMixedConditionPack: return "MixedConditionPack";
    case ErrorCode::kNoEligibleGroups: return "NoEligibleGroups";
    case ErrorCode::kDivergenceDetected: return "DivergenceDetected";
    case ErrorCode::kUnknownCondition: return "UnknownCondition";
    case ErrorCode::kInvalidConfig: return "InvalidConfig";
    case ErrorCode::kParticipantMismatch: return "ParticipantMismatch";
    case ErrorCode::kTooFewParticipants: return "TooFewParticipants";
    case ErrorCode::kEmptyColumn: return "EmptyColumn";
    case ErrorCode::kSchemaMismatch: return "SchemaMismatch";
    case ErrorCode::kIoError: return "IoError";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

}  // namespace eegbridge
