#include "lapdiag/error.hpp"

namespace lapdiag {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kNotNegativeDefinite: return "NotNegativeDefinite";
    case ErrorCode::kNonFiniteHessian: return "NonFiniteHessian";
    case ErrorCode::kNonFiniteLogF: return "NonFiniteLogF";
    case ErrorCode::kGramNotPD: return "GramNotPD";
    case ErrorCode::kReducedSystemSingular: return "ReducedSystemSingular";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kDegenerateCalibration: return "DegenerateCalibration";
    case ErrorCode::kOptimizationDiverged: return "OptimizationDiverged";
    case ErrorCode::kAllCandidatesFailed: return "AllCandidatesFailed";
    case ErrorCode::kAllWeightsZero: return "AllWeightsZero";
    case ErrorCode::kCellCountOverflow: return "CellCountOverflow";
    case ErrorCode::kIo: return "Io";
    case ErrorCode::kEvaluator: return "Evaluator";
    case ErrorCode::kInternal: return "Internal";
  }
  return "Unknown";
}

}  // namespace lapdiag
