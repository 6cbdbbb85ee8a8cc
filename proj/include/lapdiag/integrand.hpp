#pragma once

#include <functional>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace lapdiag {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Positive integrand on R^d, represented by log f together with its mode
/// and the Hessian of log f at the mode.
///
/// Evaluators must be safe to call concurrently from several threads. Point
/// evaluators may return -inf (f = 0); +inf and NaN are rejected where the
/// values are consumed.
class IntegrandSpec {
 public:
  using PointFn = std::function<double(const Eigen::Ref<const Vector>&)>;
  // Rows of the argument are points; returns one log-value per row.
  using BatchFn = std::function<Vector(const Matrix&)>;

  IntegrandSpec(std::string name, PointFn log_f, Vector mode, Matrix hessian);
  static IntegrandSpec from_batch(std::string name, BatchFn log_f, Vector mode, Matrix hessian);

  int dim() const { return static_cast<int>(mode_.size()); }
  const std::string& name() const { return name_; }
  const Vector& mode() const { return mode_; }
  const Matrix& hessian() const { return hessian_; }
  double log_f_mode() const { return log_f_mode_; }

  double log_f(const Eigen::Ref<const Vector>& x) const;
  // Evaluates every row; point evaluators are split over `threads` workers.
  Vector log_f_batch(const Matrix& rows, int threads = 1) const;

 private:
  IntegrandSpec() = default;
  void validate();

  std::string name_;
  PointFn point_fn_;
  BatchFn batch_fn_;
  Vector mode_;
  Matrix hessian_;
  double log_f_mode_ = 0.0;
};

/// Central finite-difference Hessian of log f at `mode`. The step along axis
/// i is 1e-4 * sqrt(scale_hint[i]); an empty hint means all ones.
Matrix finite_difference_hessian(const IntegrandSpec::BatchFn& log_f, const Vector& mode,
                                 const Vector& scale_hint = Vector());

/// Eigendecomposition products of -H^{-1} that define the prior mean, the
/// integrating measure, the kernel metric and the grid transform.
struct GaussianApprox {
  Vector mode;
  Matrix eigvecs;    // columns, matching eigvals
  Vector eigvals;    // eigenvalues of -H^{-1}, sorted descending
  Matrix transform;  // T = V * sqrt(D)
  double log_det_neg_hinv = 0.0;
  double log_f_mode = 0.0;
  double log_scale_n = 0.0;  // log f(mode) + 0.5 * log det(-H^{-1})

  int dim() const { return static_cast<int>(mode.size()); }
  // Maps preliminary coordinates to the integrand's coordinates.
  Vector to_original(const Eigen::Ref<const Vector>& s_star) const;
  Vector to_standard(const Eigen::Ref<const Vector>& x) const;
};

GaussianApprox gaussian_approx(const IntegrandSpec& spec);
GaussianApprox gaussian_approx(const Vector& mode, const Matrix& hessian, double log_f_mode);

/// log L(f) = log f(mode) + (d/2) log(2 pi) + 0.5 log det(-H^{-1}).
double log_laplace(const GaussianApprox& approx);

// Built-in densities. All return log-values.

/// Standard multivariate t with identity scale; d = x.size().
double mvt_log_density(const Eigen::Ref<const Vector>& x, double nu);
/// Laplace approximation of the standard multivariate t, which integrates to 1.
double mvt_laplace(double nu, int d);
double banana_log_density(const Eigen::Ref<const Vector>& x);
/// Product of univariate t factors sharing the exponent (nu + d) / 2.
double product_t_log_density(const Eigen::Ref<const Vector>& x, double nu);
double product_t_integral(double nu, int d);
double log_product_t_integral(double nu, int d);

IntegrandSpec mvt_integrand(double nu, int d);
IntegrandSpec product_t_integrand(double nu, int d);
IntegrandSpec banana_integrand();
/// Centered Gaussian with diagonal covariance `variances` (unit if empty),
/// normalized to integrate to one.
IntegrandSpec gaussian_integrand(int d, const Vector& variances = Vector());

/// Parses "banana", "mvt:nu=38,d=2", "product_t:nu=25921,d=72" or
/// "gaussian:d=10".
IntegrandSpec parse_builtin(std::string_view text);

}  // namespace lapdiag
