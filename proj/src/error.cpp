#include "adloop/error.hpp"

namespace adloop {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidInput: return "invalid-input";
    case ErrorCode::kStructural: return "structural";
    case ErrorCode::kUnbalancedTags: return "unbalanced-tags";
    case ErrorCode::kBudgetExceeded: return "budget-exceeded";
    case ErrorCode::kMissingAnswer: return "missing-answer";
    case ErrorCode::kModeInconsistency: return "mode-inconsistency";
    case ErrorCode::kGenerationFailure: return "generation-failure";
    case ErrorCode::kNoPath: return "no-path";
    case ErrorCode::kVersion: return "version";
    case ErrorCode::kNumeric: return "numeric";
    case ErrorCode::kParse: return "parse";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kInternal: return "internal";
  }
  return "unknown";
}

}  // namespace adloop
