#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mnlq {

enum class ErrorCode {
  kNotSymmetric,
  kShapeMismatch,
  kNotStable,
  kSingularSystem,
  kQuasiRNotPD,
  kNotStabilizing,
  kMaxItersExceeded,
  kRankDeficient,
  kSingularGram,
  kDivergence,
  kParseError,
  kDimensionMismatch,
  kMissingField,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNotSymmetric: return "NotSymmetric";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kNotStable: return "NotStable";
    case ErrorCode::kSingularSystem: return "SingularSystem";
    case ErrorCode::kQuasiRNotPD: return "QuasiRNotPD";
    case ErrorCode::kNotStabilizing: return "NotStabilizing";
    case ErrorCode::kMaxItersExceeded: return "MaxItersExceeded";
    case ErrorCode::kRankDeficient: return "RankDeficient";
    case ErrorCode::kSingularGram: return "SingularGram";
    case ErrorCode::kDivergence: return "Divergence";
    case ErrorCode::kParseError: return "ParseError";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kMissingField: return "MissingField";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above; the
/// message is prefixed with the code name so it survives being printed.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace mnlq
