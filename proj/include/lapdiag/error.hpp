#pragma once

#include <cstddef>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>

namespace lapdiag {

// Mirrors lapdiag_status in lapdiag.h; values must stay in sync.
enum class ErrorCode : int {
  kInvalidArgument = 1,
  kNotNegativeDefinite = 2,
  kNonFiniteHessian = 3,
  kNonFiniteLogF = 4,
  kGramNotPD = 5,
  kReducedSystemSingular = 6,
  kDimensionMismatch = 7,
  kDegenerateCalibration = 8,
  kOptimizationDiverged = 9,
  kAllCandidatesFailed = 10,
  kAllWeightsZero = 11,
  kCellCountOverflow = 12,
  kIo = 13,
  kEvaluator = 14,
  kInternal = 15,
};

const char* to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

  // Offending interrogation point, when the failure is tied to one.
  std::optional<std::size_t> point_index;
  // Reciprocal condition estimate, when the failure is a factorization.
  double rcond = std::numeric_limits<double>::quiet_NaN();

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace lapdiag
