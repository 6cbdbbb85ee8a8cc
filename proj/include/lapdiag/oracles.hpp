#pragma once

#include <cstdint>
#include <string>

#include "lapdiag/bq_engine.hpp"
#include "lapdiag/integrand.hpp"

namespace lapdiag {

// Reference computations for calibration and verification. None of these
// sit on the diagnostic's own path.

inline constexpr double kMaxRiemannCells = 1e8;

/// Midpoint-rule sum of exp(log_f) over [-halfwidth, halfwidth]^d, d <= 3.
/// Throws CellCountOverflow above 1e8 cells.
double riemann_integrate(const IntegrandSpec::PointFn& log_f, int d, double halfwidth, double step, int threads = 0);
double riemann_integrate(const IntegrandSpec& spec, double halfwidth, double step, int threads = 0);

struct L2ErrorResult {
  double value = 0.0;
  // "x1,x2,value" rows of m1^x g - f, every `csv_stride`-th cell per axis.
  std::string surface_csv;
};

/// Midpoint-rule integral of (m1^x g - f)^2 over [-halfwidth, halfwidth]^d,
/// d <= 2. csv_stride = 0 skips the surface export.
L2ErrorResult l2_error(const DiagnosticConfig& config, const IntegrandSpec& spec, double halfwidth, double step,
                       int csv_stride = 0, int threads = 0);

struct ISResult {
  double estimate = 0.0;
  double std_error = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  std::int64_t n_samples = 0;
  double max_weight_fraction = 0.0;
  double ess = 0.0;
  Vector log_weights;  // log f - log q per sample
};

/// Importance sampling with a multivariate t proposal centred at the mode
/// with scale -H^{-1}. Samples come in blocks of 4096, each from its own
/// std::mt19937_64 seeded with (seed, block index), so results depend only
/// on the seed. Throws AllWeightsZero.
ISResult importance_sample(const IntegrandSpec& spec, std::int64_t n_samples, double df, std::uint64_t seed,
                           int threads = 0);

/// Histogram of log10 of the normalized weights:
/// "log10_weight_lo,log10_weight_hi,count".
std::string weight_histogram_csv(const ISResult& result, int bins = 50);

}  // namespace lapdiag
