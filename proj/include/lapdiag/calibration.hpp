#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lapdiag/bq_engine.hpp"
#include "lapdiag/grids.hpp"

namespace lapdiag {

inline constexpr double kDefaultLaThreshold = 0.95;

/// Smallest integer nu with mvt_laplace(nu, d) >= threshold.
int find_nu(int d, double threshold = kDefaultLaThreshold);

/// sqrt(1.5 (nu + d) / (nu + d - 3)).
double gamma_rule(double nu, int d);

/// Residuals of the calibration function tau_{nu,d} on `grid`.
Vector calibration_residuals(const PreliminaryGrid& grid, double nu, double gamma);

/// Midpoint-rule L2 distance between m1^x g and tau_{nu,d} over the box
/// [-halfwidth, halfwidth]^d. Every model term is a product of per-axis
/// factors, so the model surface is assembled with small matrix products.
class TauL2Objective {
 public:
  TauL2Objective(const PreliminaryGrid& grid, double nu, double gamma, double halfwidth, double step);
  // +inf when the Gram matrix cannot be factorized.
  double operator()(double lambda) const;

 private:
  Matrix points_;  // preliminary grid points
  double nu_, gamma_, step_, c_, log_f_hat_;
  int d_;
  Vector u_;        // cell midpoints along one axis, original coordinates
  Vector tau_;      // tau over all cells, flattened with the first axis slowest
  Vector rho_;
};

struct L2Start {
  double start = 0.0;
  double lambda = 0.0;
  double objective = 0.0;
  int iterations = 0;
  bool ok = false;
  std::string status;
};

struct L2Calibration {
  double lambda = 0.0;
  double objective = 0.0;
  std::vector<L2Start> starts;
};

struct L2Options {
  double halfwidth = 10.0;
  double step = 0.01;
  std::vector<double> starts{0.5, 1.0, 2.0, 4.0, 8.0};
  // Stop when |dL2/dlog(lambda)| <= gradient_tolerance * L2.
  double gradient_tolerance = 1e-8;
  int max_iterations = 200;
};

/// Multistart quasi-Newton minimization of the L2 error over lambda.
/// Throws OptimizationDiverged when every start fails.
L2Calibration calibrate_lambda_l2(const PreliminaryGrid& grid, double nu, double gamma, const L2Options& opts = {});

struct SweepRow {
  double lambda = 0.0;
  double m1_rel = 0.0;  // m1 / L(tau)
  double m1 = 0.0;      // absolute m1 on tau, whose integral is 1
  double rcond = 0.0;
  bool ok = false;
  std::string error;
};

struct TargetCalibration {
  double lambda = 0.0;
  double m1 = 0.0;
  std::vector<SweepRow> table;
};

/// 0.5, 0.6, ..., 10.
std::vector<double> default_lambda_candidates();

/// m1 of tau_{nu,d} for each candidate lambda; failed factorizations are
/// recorded and skipped. Candidates are evaluated in parallel.
std::vector<SweepRow> lambda_sweep(const PreliminaryGrid& grid, double nu, double gamma,
                                   const std::vector<double>& candidates, SolverPath solver = SolverPath::kAuto,
                                   int threads = 0);
/// Same, for an arbitrary calibration function.
std::vector<SweepRow> lambda_sweep(const PreliminaryGrid& grid, const IntegrandSpec& tau, double gamma,
                                   const std::vector<double>& candidates, SolverPath solver = SolverPath::kAuto,
                                   int threads = 0);

/// Picks the candidate whose m1 on tau is closest to 1 (the first on ties).
/// Throws AllCandidatesFailed.
TargetCalibration calibrate_lambda_target(const PreliminaryGrid& grid, double nu, double gamma,
                                          const std::vector<double>& candidates = default_lambda_candidates(),
                                          SolverPath solver = SolverPath::kAuto);
TargetCalibration calibrate_lambda_target(const PreliminaryGrid& grid, const IntegrandSpec& tau, double gamma,
                                          const std::vector<double>& candidates = default_lambda_candidates(),
                                          SolverPath solver = SolverPath::kAuto);

/// log alpha placing tau exactly on the rejection boundary.
/// Throws DegenerateCalibration when Delta(tau) = 0.
double solve_alpha(const PreliminaryGrid& grid, double nu, double gamma, double lambda,
                   double quantile = kDefaultQuantile, SolverPath solver = SolverPath::kAuto);
double solve_alpha(const PreliminaryGrid& grid, const IntegrandSpec& tau, double gamma, double lambda,
                   double quantile = kDefaultQuantile, SolverPath solver = SolverPath::kAuto);

enum class CalibrationMethod { kL2Optimized, kTargetM1, kFixed };
std::string_view to_string(CalibrationMethod method);
CalibrationMethod parse_calibration_method(std::string_view text);

struct CalibrationResult {
  DiagnosticConfig config;
  double nu = 0.0;
  double achieved_m1 = 0.0;
  double boundary_residual = 0.0;
  double rcond = 0.0;
  double la_threshold = kDefaultLaThreshold;
  CalibrationMethod method = CalibrationMethod::kFixed;
  std::optional<L2Calibration> l2;
  std::optional<TargetCalibration> target;
};

struct CalibrateOptions {
  // Unset picks L2 for grids with d <= 2 and the candidate sweep otherwise.
  std::optional<CalibrationMethod> method;
  std::optional<double> lambda;  // required for kFixed
  std::optional<double> gamma;   // overrides the gamma rule
  double la_threshold = kDefaultLaThreshold;
  double quantile = kDefaultQuantile;
  SolverPath solver = SolverPath::kAuto;
  L2Options l2;
  std::vector<double> candidates = default_lambda_candidates();
};

/// Full pipeline: nu rule, gamma rule, lambda selection and alpha solve.
CalibrationResult calibrate(const PreliminaryGrid& grid, const CalibrateOptions& opts = {});

/// Cache key: dimension, grid family, grid scale, nu rule and gamma rule.
std::string calibration_key(const PreliminaryGrid& grid, double la_threshold);

nlohmann::json calibration_to_json(const CalibrationResult& result);
CalibrationResult calibration_from_json(const nlohmann::json& doc);

}  // namespace lapdiag
