#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace promptlens {

enum class ErrorCode {
  kInvalidArgument,
  kEmptyBase,
  kTokenBudgetExceeded,
  kParseError,
  kDuplicateEntry,
  kUnknownCategory,
  kBackendUnavailable,
  kGenerationFailed,
  kCacheCorrupt,
  kDimensionMismatch,
  kWeightsUnavailable,
  kEncoderUnavailable,
  kZeroVector,
  kEmptyInput,
  kInsufficientData,
  kZeroVariance,
  kMetricMismatch,
  kNoCompleteObservations,
  kNoObservations,
  kUnknownPreset,
  kInvalidConfig,
  kSessionNotFound,
  kNotFound,
  kLabelMismatch,
  kIoError,
};

std::string_view to_string(ErrorCode code);

// Every failure surfaced by the toolkit carries one of the codes above; the
// service layer maps codes onto HTTP statuses.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::string detail = {})
      : std::runtime_error(message), code_(code), detail_(std::move(detail)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace promptlens
