#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "lapdiag/grids.hpp"
#include "lapdiag/integrand.hpp"

namespace lapdiag {

// Everything below works in standardized coordinates s* and in normalized
// units: function values are divided by N = f(mode) * sqrt(det(-H^{-1})),
// which cancels from every decision quantity.

/// 95% two-sided normal quantile as printed in the rejection rule.
inline constexpr double kDefaultQuantile = 1.96;
/// The exact quantile, for callers that want p < 0.05 and |Delta| > eps to agree.
inline constexpr double kExactQuantile = 1.959963984540054;

enum class SolverPath { kAuto, kDense, kFskq };

std::string_view to_string(SolverPath path);
SolverPath parse_solver_path(std::string_view text);

/// Dense solves are used up to this many points under SolverPath::kAuto.
inline constexpr Eigen::Index kDenseLimit = 2000;

struct DiagnosticConfig {
  PreliminaryGrid grid;
  double lambda = 1.0;
  double gamma = 1.0;
  double log_alpha = 0.0;
  double quantile = kDefaultQuantile;
  bool jitter = false;
  SolverPath solver = SolverPath::kAuto;

  int dim() const { return grid.dim(); }
  void validate() const;
};

/// log k(u, v) = -d log(alpha) - |u - v|^2 / (2 lambda^2).
double log_kernel(const Eigen::Ref<const Vector>& u, const Eigen::Ref<const Vector>& v, double lambda,
                  double log_alpha);
/// log of the kernel integrated against N(0, gamma^2 I) in its first argument.
double log_kernel_mean(const Eigen::Ref<const Vector>& s_star, double lambda, double log_alpha, double gamma);
/// log of the kernel integrated against N(0, gamma^2 I) in both arguments.
double log_double_kernel_mean(double lambda, double log_alpha, double gamma, int d);
/// log of the prior mean of the reweighted integrand, in normalized units:
/// (d/2) log(2 pi) + d log(gamma) - |s*|^2 (1 - 1/gamma^2) / 2.
double log_prior_mean_interrogation(const Eigen::Ref<const Vector>& s_star, double gamma);
/// log of the standardized measure density, N(0, gamma^2 I) at s*.
double log_measure_density(const Eigen::Ref<const Vector>& s_star, double gamma);

/// Normalized residuals (r - m0) at the grid points, given log f at the
/// interrogation points. -inf maps to f = 0; +inf or NaN throw NonFiniteLogF.
Vector residuals_from_log_values(const PreliminaryGrid& grid, const Vector& log_f, double log_f_mode, double gamma);
Vector residual_vector(const IntegrandSpec& spec, const GaussianApprox& approx, const PreliminaryGrid& grid,
                       double gamma, int threads = 1);

/// Quadrature weights K^{-1} z for alpha = 1, independent of the integrand.
struct BqWeights {
  Vector weights;              // one per grid point, grid order
  std::vector<double> orbit_weights;  // one per orbit (FSKQ path, or orbit means on the dense path)
  double log_c0 = 0.0;         // log C0 at alpha = 1
  double log_c1_unit = 0.0;    // log(C0 - z^T K^{-1} z) at alpha = 1
  double rcond = 0.0;          // Gram matrix on the dense path, reduced system on FSKQ
  SolverPath solver = SolverPath::kDense;
  int dim = 0;
};

/// Dense symmetric positive-definite solve. Throws GramNotPD with rcond.
BqWeights dense_weights(const PreliminaryGrid& grid, double lambda, double gamma, bool jitter = false);
/// Reduced one-unknown-per-orbit solve. Throws ReducedSystemSingular.
BqWeights fskq_weights(const PreliminaryGrid& grid, double lambda, double gamma);
BqWeights compute_weights(const PreliminaryGrid& grid, double lambda, double gamma, SolverPath path = SolverPath::kAuto,
                          bool jitter = false);
/// Per-orbit weights of the reduced system; expanding them orbit-constant
/// reproduces K^{-1} z. Weights carry the alpha-free normalization.
std::vector<double> fskq_orbit_weights(const PreliminaryGrid& grid, double lambda, double log_alpha, double gamma);
/// Gram matrix at alpha = 1.
Matrix gram_matrix(const PreliminaryGrid& grid, double lambda);

struct IntegralPosterior {
  double m1_rel = 1.0;
  double c1_rel = 0.0;
  double log_c1_rel = 0.0;
  double delta = 0.0;
  double epsilon = 0.0;
  double log_c1_tilde = 0.0;  // log of the normalized posterior variance
  double log_la = 0.0;
  double p_value = 1.0;
  double log_p_value = 0.0;
  double significance = 0.05;  // erfc(quantile / sqrt 2)
  double quantile = kDefaultQuantile;
  bool reject = false;
  bool boundary = false;
  // (|Delta| - epsilon) / epsilon.
  double boundary_residual = 0.0;
  double rcond = 0.0;
  SolverPath solver = SolverPath::kDense;

  double m1() const;  // absolute posterior mean
  double c1() const;  // absolute posterior variance
};

/// Posterior from precomputed weights. `log_la` and `log_scale_n` come from
/// the Gaussian approximation of the integrand.
IntegralPosterior posterior_from_weights(const BqWeights& weights, double log_alpha, double quantile,
                                         double log_la, double log_scale_n, const Vector& residuals);
IntegralPosterior posterior(const DiagnosticConfig& config, const GaussianApprox& approx, const Vector& residuals);

/// Two-sided normal tail probability erfc(t / sqrt 2) and its logarithm,
/// stable far into the tail.
double two_sided_p(double t);
double log_two_sided_p(double t);

struct OrbitContribution {
  std::vector<double> generator;
  Eigen::Index size = 0;
  double radius = 0.0;
  double weight = 0.0;          // mean weight over the orbit
  double contribution_rel = 0.0;  // share of the correction, relative to L(f)
  double contribution_abs = 0.0;  // N * sum of weight * residual
};

struct DiagnosticReport {
  std::string integrand;
  int dim = 0;
  IntegralPosterior posterior;
  double log_f_mode = 0.0;
  double log_scale_n = 0.0;
  double lambda = 0.0;
  double gamma = 0.0;
  double log_alpha = 0.0;
  GridFamily grid_family = GridFamily::kCustom;
  double grid_scale = 1.0;
  Eigen::Index n_points = 0;
  std::vector<OrbitContribution> orbits;
  std::vector<std::string> warnings;
  // Wall-clock seconds; kept out of the JSON so reports stay reproducible.
  double seconds_evaluate = 0.0;
  double seconds_solve = 0.0;
};

/// Worker count from LG_THREADS, else the hardware concurrency.
int default_threads();

DiagnosticReport diagnose(const IntegrandSpec& spec, const DiagnosticConfig& config, int threads = 0);

nlohmann::json report_to_json(const DiagnosticReport& report);
/// One row per orbit: generator, size, radius, weight, contribution_rel, contribution_abs.
std::string orbit_contributions_csv(const DiagnosticReport& report);

}  // namespace lapdiag
