#include "promptlens/error.hpp"

namespace promptlens {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kEmptyBase: return "EmptyBase";
    case ErrorCode::kTokenBudgetExceeded: return "TokenBudgetExceeded";
    case ErrorCode::kParseError: return "ParseError";
    case ErrorCode::kDuplicateEntry: return "DuplicateEntry";
    case ErrorCode::kUnknownCategory: return "UnknownCategory";
    case ErrorCode::kBackendUnavailable: return "BackendUnavailable";
    case ErrorCode::kGenerationFailed: return "GenerationFailed";
    case ErrorCode::kCacheCorrupt: return "CacheCorrupt";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kWeightsUnavailable: return "WeightsUnavailable";
    case ErrorCode::kEncoderUnavailable: return "EncoderUnavailable";
    case ErrorCode::kZeroVector: return "ZeroVector";
    case ErrorCode::kEmptyInput: return "EmptyInput";
    case ErrorCode::kInsufficientData: return "InsufficientData";
    case ErrorCode::kZeroVariance: return "ZeroVariance";
    case ErrorCode::kMetricMismatch: return "MetricMismatch";
    case ErrorCode::kNoCompleteObservations: return "NoCompleteObservations";
    case ErrorCode::kNoObservations: return "NoObservations";
    case ErrorCode::kUnknownPreset: return "UnknownPreset";
    case ErrorCode::kInvalidConfig: return "InvalidConfig";
    case ErrorCode::kSessionNotFound: return "SessionNotFound";
    case ErrorCode::kNotFound: return "NotFound";
    case ErrorCode::kLabelMismatch: return "LabelMismatch";
    case ErrorCode::kIoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace promptlens
