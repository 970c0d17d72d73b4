#include "vitalloc/error.hpp"

namespace vitalloc {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidInput: return "invalid input";
    case ErrorCode::kParse: return "parse error";
    case ErrorCode::kSchema: return "schema error";
    case ErrorCode::kDegenerateRange: return "degenerate range";
    case ErrorCode::kInsufficientData: return "insufficient data";
    case ErrorCode::kDegenerateFit: return "degenerate fit";
    case ErrorCode::kDegenerateModel: return "degenerate model";
    case ErrorCode::kInfeasible: return "infeasible";
    case ErrorCode::kContractViolation: return "contract violation";
    case ErrorCode::kNumericFailure: return "numeric failure";
    case ErrorCode::kIo: return "i/o error";
  }
  return "error";
}

}  // namespace vitalloc
