#include "lapdiag/integrand.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>
#include <thread>
#include <vector>

#include "lapdiag/error.hpp"
#include "util.hpp"

namespace lapdiag {

namespace {

using detail::kLog2Pi;
using detail::format_double;

void check_nu(double nu) {
  if (!(nu > 0.0) || !std::isfinite(nu)) fail(ErrorCode::kInvalidArgument, "degrees of freedom must be positive");
}

}  // namespace

IntegrandSpec::IntegrandSpec(std::string name, PointFn log_f, Vector mode, Matrix hessian)
    : name_(std::move(name)), point_fn_(std::move(log_f)), mode_(std::move(mode)), hessian_(std::move(hessian)) {
  if (!point_fn_) fail(ErrorCode::kInvalidArgument, "integrand evaluator is empty");
  validate();
}

IntegrandSpec IntegrandSpec::from_batch(std::string name, BatchFn log_f, Vector mode, Matrix hessian) {
  if (!log_f) fail(ErrorCode::kInvalidArgument, "integrand evaluator is empty");
  IntegrandSpec spec;
  spec.name_ = std::move(name);
  spec.batch_fn_ = std::move(log_f);
  spec.mode_ = std::move(mode);
  spec.hessian_ = std::move(hessian);
  spec.validate();
  return spec;
}

void IntegrandSpec::validate() {
  const auto d = mode_.size();
  if (d < 1) fail(ErrorCode::kInvalidArgument, "integrand dimension must be positive");
  if (hessian_.rows() != d || hessian_.cols() != d)
    fail(ErrorCode::kDimensionMismatch, "hessian must be " + std::to_string(d) + "x" + std::to_string(d));
  if (!mode_.allFinite()) fail(ErrorCode::kInvalidArgument, "mode has non-finite entries");
  if (!hessian_.allFinite()) fail(ErrorCode::kNonFiniteHessian, "hessian has non-finite entries");
  hessian_ = 0.5 * (hessian_ + hessian_.transpose()).eval();
  // Throws NotNegativeDefinite.
  (void)gaussian_approx(mode_, hessian_, 0.0);
  log_f_mode_ = log_f(mode_);
  if (!std::isfinite(log_f_mode_)) fail(ErrorCode::kNonFiniteLogF, "log f at the mode is not finite");
}

double IntegrandSpec::log_f(const Eigen::Ref<const Vector>& x) const {
  if (point_fn_) return point_fn_(x);
  Matrix row = x.transpose();
  Vector out = batch_fn_(row);
  if (out.size() != 1) fail(ErrorCode::kEvaluator, "evaluator returned the wrong number of values");
  return out[0];
}

Vector IntegrandSpec::log_f_batch(const Matrix& rows, int threads) const {
  if (rows.cols() != dim()) fail(ErrorCode::kDimensionMismatch, "points have the wrong dimension");
  if (batch_fn_) {
    Vector out = batch_fn_(rows);
    if (out.size() != rows.rows()) fail(ErrorCode::kEvaluator, "evaluator returned the wrong number of values");
    return out;
  }
  const Eigen::Index n = rows.rows();
  Vector out(n);
  auto work = [&](Eigen::Index begin, Eigen::Index end) {
    for (Eigen::Index i = begin; i < end; ++i) out[i] = point_fn_(rows.row(i).transpose());
  };
  const Eigen::Index workers = std::clamp<Eigen::Index>(threads, 1, std::max<Eigen::Index>(n / 64, 1));
  if (workers == 1) {
    work(0, n);
    return out;
  }
  std::vector<std::jthread> pool;
  const Eigen::Index chunk = (n + workers - 1) / workers;
  for (Eigen::Index w = 0; w < workers; ++w) {
    const Eigen::Index b = w * chunk;
    const Eigen::Index e = std::min(n, b + chunk);
    if (b < e) pool.emplace_back(work, b, e);
  }
  pool.clear();
  return out;
}

Matrix finite_difference_hessian(const IntegrandSpec::BatchFn& log_f, const Vector& mode, const Vector& scale_hint) {
  const Eigen::Index d = mode.size();
  Vector h(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    const double hint = scale_hint.size() == d ? scale_hint[i] : 1.0;
    if (!(hint > 0.0)) fail(ErrorCode::kInvalidArgument, "scale hints must be positive");
    h[i] = 1e-4 * std::sqrt(hint);
  }

  // Stencil: centre, +-h_i e_i, and the four corners for each i < j.
  const Eigen::Index n = 1 + 2 * d + 2 * d * (d - 1);
  Matrix pts = mode.transpose().replicate(n, 1);
  Eigen::Index row = 1;
  for (Eigen::Index i = 0; i < d; ++i) {
    pts(row++, i) += h[i];
    pts(row++, i) -= h[i];
  }
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = i + 1; j < d; ++j) {
      for (int si : {1, -1}) {
        for (int sj : {1, -1}) {
          pts(row, i) += si * h[i];
          pts(row, j) += sj * h[j];
          ++row;
        }
      }
    }
  }
  const Vector v = log_f(pts);
  if (v.size() != n) fail(ErrorCode::kEvaluator, "evaluator returned the wrong number of values");
  if (!v.allFinite()) fail(ErrorCode::kNonFiniteHessian, "log f is not finite on the finite-difference stencil");

  Matrix H(d, d);
  row = 1;
  for (Eigen::Index i = 0; i < d; ++i) {
    H(i, i) = (v[row] - 2.0 * v[0] + v[row + 1]) / (h[i] * h[i]);
    row += 2;
  }
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = i + 1; j < d; ++j) {
      const double pp = v[row], pm = v[row + 1], mp = v[row + 2], mm = v[row + 3];
      H(i, j) = H(j, i) = (pp - pm - mp + mm) / (4.0 * h[i] * h[j]);
      row += 4;
    }
  }
  return H;
}

Vector GaussianApprox::to_original(const Eigen::Ref<const Vector>& s_star) const { return transform * s_star + mode; }

Vector GaussianApprox::to_standard(const Eigen::Ref<const Vector>& x) const {
  // T^{-1} = D^{-1/2} V^T since V is orthogonal.
  return (eigvecs.transpose() * (x - mode)).cwiseQuotient(eigvals.cwiseSqrt());
}

GaussianApprox gaussian_approx(const Vector& mode, const Matrix& hessian, double log_f_mode) {
  const Eigen::Index d = mode.size();
  if (hessian.rows() != d || hessian.cols() != d) fail(ErrorCode::kDimensionMismatch, "hessian does not match the mode");
  if (!hessian.allFinite()) fail(ErrorCode::kNonFiniteHessian, "hessian has non-finite entries");
  const Matrix neg_h = -0.5 * (hessian + hessian.transpose());

  // Eigenpairs of -H; eigenvalues of -H^{-1} are their reciprocals.
  Vector mu(d);
  Matrix vecs(d, d);
  const bool diagonal = (neg_h - Matrix(neg_h.diagonal().asDiagonal())).cwiseAbs().maxCoeff() == 0.0;
  if (diagonal) {
    mu = neg_h.diagonal();
    vecs.setIdentity();
  } else {
    Eigen::SelfAdjointEigenSolver<Matrix> es(neg_h);
    if (es.info() != Eigen::Success) fail(ErrorCode::kNotNegativeDefinite, "eigendecomposition of -H failed");
    mu = es.eigenvalues();
    vecs = es.eigenvectors();
  }
  const double scale = mu.cwiseAbs().maxCoeff();
  for (Eigen::Index i = 0; i < d; ++i) {
    if (!(mu[i] > 1e-12 * scale) || scale == 0.0)
      fail(ErrorCode::kNotNegativeDefinite, "hessian is not negative definite");
  }

  // Ascending mu is descending D; stable so exact ties keep solver order.
  std::vector<Eigen::Index> order(d);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return mu[a] < mu[b]; });

  GaussianApprox out;
  out.mode = mode;
  out.eigvals.resize(d);
  out.eigvecs.resize(d, d);
  for (Eigen::Index k = 0; k < d; ++k) {
    out.eigvals[k] = 1.0 / mu[order[k]];
    Vector v = vecs.col(order[k]);
    const double vmax = v.cwiseAbs().maxCoeff();
    for (Eigen::Index i = 0; i < d; ++i) {
      if (std::abs(v[i]) > 1e-12 * vmax) {
        if (v[i] < 0) v = -v;
        break;
      }
    }
    out.eigvecs.col(k) = v;
  }
  out.transform = out.eigvecs * out.eigvals.cwiseSqrt().asDiagonal();
  out.log_det_neg_hinv = out.eigvals.array().log().sum();
  out.log_f_mode = log_f_mode;
  out.log_scale_n = log_f_mode + 0.5 * out.log_det_neg_hinv;
  return out;
}

GaussianApprox gaussian_approx(const IntegrandSpec& spec) {
  return gaussian_approx(spec.mode(), spec.hessian(), spec.log_f_mode());
}

double log_laplace(const GaussianApprox& approx) {
  return approx.log_f_mode + 0.5 * approx.dim() * kLog2Pi + 0.5 * approx.log_det_neg_hinv;
}

double mvt_log_density(const Eigen::Ref<const Vector>& x, double nu) {
  check_nu(nu);
  const double d = static_cast<double>(x.size());
  return std::lgamma(0.5 * (nu + d)) - std::lgamma(0.5 * nu) - 0.5 * d * std::log(nu * std::numbers::pi) -
         0.5 * (nu + d) * std::log1p(x.squaredNorm() / nu);
}

double mvt_laplace(double nu, int d) {
  check_nu(nu);
  return std::exp(0.5 * d * std::log(2.0 / (nu + d)) + std::lgamma(0.5 * (nu + d)) - std::lgamma(0.5 * nu));
}

double banana_log_density(const Eigen::Ref<const Vector>& x) {
  if (x.size() != 2) fail(ErrorCode::kDimensionMismatch, "banana is two-dimensional");
  const double u = x[0];
  const double v = x[1] - 0.5 * (x[0] * x[0] - 3.0);
  return -kLog2Pi - 0.5 * std::log(3.0) - u * u / 6.0 - 0.5 * v * v;
}

double product_t_log_density(const Eigen::Ref<const Vector>& x, double nu) {
  check_nu(nu);
  const double d = static_cast<double>(x.size());
  // Scaled so the value at the origin matches the multivariate t.
  double acc = std::lgamma(0.5 * (nu + d)) - std::lgamma(0.5 * nu) - 0.5 * d * std::log(nu * std::numbers::pi);
  for (Eigen::Index i = 0; i < x.size(); ++i) acc -= 0.5 * (nu + d) * std::log1p(x[i] * x[i] / nu);
  return acc;
}

double log_product_t_integral(double nu, int d) {
  check_nu(nu);
  return d * std::lgamma(0.5 * (nu + d - 1)) - std::lgamma(0.5 * nu) - (d - 1) * std::lgamma(0.5 * (nu + d));
}

double product_t_integral(double nu, int d) { return std::exp(log_product_t_integral(nu, d)); }

IntegrandSpec mvt_integrand(double nu, int d) {
  check_nu(nu);
  if (d < 1) fail(ErrorCode::kInvalidArgument, "dimension must be positive");
  Matrix h = Matrix::Identity(d, d) * (-(nu + d) / nu);
  return IntegrandSpec("mvt:nu=" + format_double(nu) + ",d=" + std::to_string(d),
                       [nu](const Eigen::Ref<const Vector>& x) { return mvt_log_density(x, nu); }, Vector::Zero(d), h);
}

IntegrandSpec product_t_integrand(double nu, int d) {
  check_nu(nu);
  if (d < 1) fail(ErrorCode::kInvalidArgument, "dimension must be positive");
  Matrix h = Matrix::Identity(d, d) * (-(nu + d) / nu);
  return IntegrandSpec("product_t:nu=" + format_double(nu) + ",d=" + std::to_string(d),
                       [nu](const Eigen::Ref<const Vector>& x) { return product_t_log_density(x, nu); },
                       Vector::Zero(d), h);
}

IntegrandSpec banana_integrand() {
  Vector mode(2);
  mode << 0.0, -1.5;
  Matrix h(2, 2);
  h << -1.0 / 3.0, 0.0, 0.0, -1.0;
  return IntegrandSpec("banana", [](const Eigen::Ref<const Vector>& x) { return banana_log_density(x); }, mode, h);
}

IntegrandSpec gaussian_integrand(int d, const Vector& variances) {
  if (d < 1) fail(ErrorCode::kInvalidArgument, "dimension must be positive");
  Vector var = variances.size() == 0 ? Vector::Ones(d) : variances;
  if (var.size() != d || !(var.array() > 0.0).all())
    fail(ErrorCode::kInvalidArgument, "variances must be positive and match the dimension");
  const double log_norm = -0.5 * d * kLog2Pi - 0.5 * var.array().log().sum();
  Vector precision = var.cwiseInverse();
  Matrix h = -Matrix(precision.asDiagonal());
  return IntegrandSpec("gaussian:d=" + std::to_string(d),
                       [precision, log_norm](const Eigen::Ref<const Vector>& x) {
                         return log_norm - 0.5 * x.cwiseAbs2().dot(precision);
                       },
                       Vector::Zero(d), h);
}

IntegrandSpec parse_builtin(std::string_view text) {
  const auto colon = text.find(':');
  const std::string name(text.substr(0, colon));
  std::map<std::string, double> params;
  if (colon != std::string_view::npos) {
    std::string_view rest = text.substr(colon + 1);
    while (!rest.empty()) {
      const auto comma = rest.find(',');
      const std::string_view item = rest.substr(0, comma);
      const auto eq = item.find('=');
      if (eq == std::string_view::npos) fail(ErrorCode::kInvalidArgument, "malformed builtin parameter: " + std::string(item));
      const std::string key(item.substr(0, eq));
      const std::string value(item.substr(eq + 1));
      try {
        std::size_t used = 0;
        params[key] = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
      } catch (const std::exception&) {
        fail(ErrorCode::kInvalidArgument, "builtin parameter " + key + " is not a number: " + value);
      }
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
  }
  auto get = [&](const char* key) {
    auto it = params.find(key);
    if (it == params.end()) fail(ErrorCode::kInvalidArgument, "builtin " + name + " needs parameter " + key);
    return it->second;
  };
  auto dim = [&] {
    const double d = get("d");
    if (d < 1 || d != std::floor(d)) fail(ErrorCode::kInvalidArgument, "d must be a positive integer");
    return static_cast<int>(d);
  };
  if (name == "banana") return banana_integrand();
  if (name == "mvt") return mvt_integrand(get("nu"), dim());
  if (name == "product_t") return product_t_integrand(get("nu"), dim());
  if (name == "gaussian") return gaussian_integrand(dim());
  fail(ErrorCode::kInvalidArgument, "unknown builtin: " + name);
}

}  // namespace lapdiag
