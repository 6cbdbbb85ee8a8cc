#include "lapdiag/calibration.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numbers>
#include <thread>

#include "lapdiag/error.hpp"
#include "util.hpp"

namespace lapdiag {

using detail::format_double;
using detail::kLog2Pi;

int find_nu(int d, double threshold) {
  if (d < 1) fail(ErrorCode::kInvalidArgument, "dimension must be positive");
  if (!(threshold > 0.0 && threshold < 1.0)) fail(ErrorCode::kInvalidArgument, "LA threshold must lie in (0, 1)");
  // Relative slack so that exact ties like L(tau_38,2) = 19/20 survive lgamma rounding.
  const double target = threshold * (1.0 - 1e-12);
  auto ok = [&](long long nu) { return mvt_laplace(static_cast<double>(nu), d) >= target; };
  if (ok(1)) return 1;
  long long lo = 1, hi = 2;
  while (!ok(hi)) {
    lo = hi;
    hi *= 2;
    if (hi > (1LL << 40)) fail(ErrorCode::kInternal, "degrees-of-freedom search did not terminate");
  }
  while (hi - lo > 1) {
    const long long mid = lo + (hi - lo) / 2;
    (ok(mid) ? hi : lo) = mid;
  }
  return static_cast<int>(hi);
}

double gamma_rule(double nu, int d) {
  const double s = nu + d;
  if (!(s > 3.0)) fail(ErrorCode::kInvalidArgument, "gamma rule needs nu + d > 3");
  return std::sqrt(1.5 * s / (s - 3.0));
}

Vector calibration_residuals(const PreliminaryGrid& grid, double nu, double gamma) {
  const IntegrandSpec tau = mvt_integrand(nu, grid.dim());
  return residual_vector(tau, gaussian_approx(tau), grid, gamma);
}

TauL2Objective::TauL2Objective(const PreliminaryGrid& grid, double nu, double gamma, double halfwidth, double step)
    : points_(grid.points()), nu_(nu), gamma_(gamma), step_(step), d_(grid.dim()) {
  if (d_ > 3) fail(ErrorCode::kInvalidArgument, "L2 calibration needs d <= 3");
  if (!(halfwidth > 0.0) || !(step > 0.0)) fail(ErrorCode::kInvalidArgument, "halfwidth and step must be positive");
  const auto m = static_cast<Eigen::Index>(std::llround(2.0 * halfwidth / step));
  if (m < 1) fail(ErrorCode::kInvalidArgument, "step exceeds the box");
  const double cells = std::pow(static_cast<double>(m), d_);
  if (cells > 1e8) fail(ErrorCode::kCellCountOverflow, "L2 box has " + format_double(cells) + " cells, above 1e8");
  const double h = 2.0 * halfwidth / static_cast<double>(m);
  step_ = h;
  u_.resize(m);
  for (Eigen::Index k = 0; k < m; ++k) u_[k] = -halfwidth + (static_cast<double>(k) + 0.5) * h;

  // tau has H = -(nu + d)/nu I at the origin, so T = c I.
  c_ = std::sqrt(nu / (nu + d_));
  log_f_hat_ = mvt_log_density(Vector::Zero(d_), nu);
  const auto total = static_cast<Eigen::Index>(cells);
  tau_.resize(total);
  Vector x(d_);
  for (Eigen::Index idx = 0; idx < total; ++idx) {
    Eigen::Index rem = idx;
    for (int j = d_ - 1; j >= 0; --j) {
      x[j] = u_[rem % m];
      rem /= m;
    }
    tau_[idx] = std::exp(mvt_log_density(x, nu));
  }
  rho_ = calibration_residuals(grid, nu, gamma);
}

double TauL2Objective::operator()(double lambda) const {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) return std::numeric_limits<double>::infinity();
  const Eigen::Index n = points_.rows();
  const Eigen::Index m = u_.size();
  Matrix k(n, n);
  const double inv = 1.0 / (2.0 * lambda * lambda);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) k(i, j) = std::exp(-(points_.row(i) - points_.row(j)).squaredNorm() * inv);
  Eigen::LLT<Matrix> llt(k);
  if (llt.info() != Eigen::Success) return std::numeric_limits<double>::infinity();
  const Vector beta = llt.solve(rho_);
  if (!beta.allFinite()) return std::numeric_limits<double>::infinity();

  // m1^x g = f_hat [exp(-|s|^2/2) + g~(s) sum_i k(s, s_i) beta_i], a sum of
  // n + 1 separable terms; term t has coefficient coef[t] and axis factors.
  const Eigen::Index terms = n + 1;
  std::vector<Matrix> factors(static_cast<std::size_t>(d_), Matrix(m, terms));
  Vector coef(terms);
  const double f_hat = std::exp(log_f_hat_);
  coef[0] = f_hat;
  const double g_norm = std::exp(-0.5 * d_ * kLog2Pi - d_ * std::log(gamma_));
  for (Eigen::Index i = 0; i < n; ++i) coef[i + 1] = f_hat * g_norm * beta[i];
  const double ig2 = 1.0 / (2.0 * gamma_ * gamma_);
  for (int j = 0; j < d_; ++j) {
    Matrix& f = factors[static_cast<std::size_t>(j)];
    for (Eigen::Index kk = 0; kk < m; ++kk) {
      const double s = u_[kk] / c_;
      f(kk, 0) = std::exp(-0.5 * s * s);
      for (Eigen::Index i = 0; i < n; ++i) {
        const double diff = s - points_(i, j);
        f(kk, i + 1) = std::exp(-s * s * ig2 - diff * diff * inv);
      }
    }
  }

  // Expanding (A - tau)^2 cancels catastrophically when beta is large, so
  // the model is formed slab by slab over the last two axes and differenced.
  const double cell = std::pow(step_, d_);
  if (d_ == 1) return (factors[0] * coef - tau_).squaredNorm() * cell;
  const Matrix& f_last = factors[static_cast<std::size_t>(d_ - 1)];
  const Matrix& f_prev = factors[static_cast<std::size_t>(d_ - 2)];
  const Eigen::Index slab = m * m;
  const Eigen::Index slabs = tau_.size() / slab;
  double acc = 0.0;
  for (Eigen::Index q = 0; q < slabs; ++q) {
    Vector w = coef;
    if (d_ == 3) w.array() *= factors[0].row(q).transpose().array();
    Eigen::Map<const Matrix> tau_slab(tau_.data() + q * slab, m, m);
    const Matrix model = f_last * w.asDiagonal() * f_prev.transpose();
    acc += (model - tau_slab).squaredNorm();
  }
  return acc * cell;
}

namespace {

L2Start minimize_from(const TauL2Objective& obj, double start, const L2Options& opts) {
  L2Start out;
  out.start = start;
  double x = start;
  double fx = obj(x);
  if (!std::isfinite(fx)) {
    out.status = "objective not finite at start";
    out.lambda = x;
    out.objective = fx;
    return out;
  }
  auto grad = [&](double at) {
    const double h = 1e-5 * std::max(at, 1e-3);
    return (obj(at + h) - obj(at - h)) / (2.0 * h);
  };
  double g = grad(x);
  // Inverse curvature estimate; the first step moves a quarter of lambda.
  double hinv = g != 0.0 ? 0.25 * x / std::abs(g) : 1.0;
  out.status = "max iterations";
  for (int it = 0; it < opts.max_iterations; ++it) {
    out.iterations = it + 1;
    if (!std::isfinite(g)) {
      out.status = "gradient not finite";
      break;
    }
    // Scale-free test: |dL2/dlog(lambda)| relative to L2 itself.
    if (std::abs(g) * x <= opts.gradient_tolerance * std::abs(fx)) {
      out.status = "gradient tolerance";
      out.ok = true;
      break;
    }
    const double p = -hinv * g;
    double t = 1.0;
    double xn = x, fn = fx;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      xn = x + t * p;
      if (xn > 0.0) {
        fn = obj(xn);
        if (std::isfinite(fn) && fn <= fx + 1e-4 * t * g * p) {
          accepted = true;
          break;
        }
      }
      t *= 0.5;
    }
    if (!accepted) {
      // No descent left along the gradient: converged to noise level.
      out.status = "line search stalled";
      out.ok = std::abs(t * p) < 1e-8 * x || it > 0;
      break;
    }
    const double s = xn - x;
    const double gn = grad(xn);
    const double y = gn - g;
    if (s * y > 0.0) hinv = s / y;
    x = xn;
    fx = fn;
    g = gn;
    if (std::abs(s) < 1e-10 * x) {
      out.status = "step tolerance";
      out.ok = true;
      break;
    }
  }
  if (out.status == "max iterations") out.ok = true;
  out.lambda = x;
  out.objective = fx;
  return out;
}

}  // namespace

L2Calibration calibrate_lambda_l2(const PreliminaryGrid& grid, double nu, double gamma, const L2Options& opts) {
  if (opts.starts.empty()) fail(ErrorCode::kInvalidArgument, "no starting values");
  const TauL2Objective obj(grid, nu, gamma, opts.halfwidth, opts.step);
  L2Calibration out;
  out.starts.resize(opts.starts.size());
  {
    std::vector<std::jthread> pool;
    for (std::size_t i = 0; i < opts.starts.size(); ++i)
      pool.emplace_back([&, i] { out.starts[i] = minimize_from(obj, opts.starts[i], opts); });
  }
  bool any = false;
  out.objective = std::numeric_limits<double>::infinity();
  for (const L2Start& s : out.starts) {
    if (s.ok && std::isfinite(s.objective) && s.objective < out.objective) {
      out.objective = s.objective;
      out.lambda = s.lambda;
      any = true;
    }
  }
  if (!any) fail(ErrorCode::kOptimizationDiverged, "L2 minimization failed from every starting value");
  return out;
}

std::vector<double> default_lambda_candidates() {
  std::vector<double> out;
  for (int i = 5; i <= 100; ++i) out.push_back(i / 10.0);
  return out;
}

std::vector<SweepRow> lambda_sweep(const PreliminaryGrid& grid, double nu, double gamma,
                                   const std::vector<double>& candidates, SolverPath solver, int threads) {
  return lambda_sweep(grid, mvt_integrand(nu, grid.dim()), gamma, candidates, solver, threads);
}

std::vector<SweepRow> lambda_sweep(const PreliminaryGrid& grid, const IntegrandSpec& tau, double gamma,
                                   const std::vector<double>& candidates, SolverPath solver, int threads) {
  const GaussianApprox approx = gaussian_approx(tau);
  const Vector rho = residual_vector(tau, approx, grid, gamma);
  const double log_la = log_laplace(approx);
  std::vector<SweepRow> rows(candidates.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < candidates.size(); i = next++) {
      SweepRow& r = rows[i];
      r.lambda = candidates[i];
      try {
        const BqWeights w = compute_weights(grid, r.lambda, gamma, solver);
        const IntegralPosterior p = posterior_from_weights(w, 0.0, kDefaultQuantile, log_la, approx.log_scale_n, rho);
        r.m1_rel = p.m1_rel;
        r.m1 = p.m1();
        r.rcond = p.rcond;
        r.ok = std::isfinite(r.m1);
        if (!r.ok) r.error = "non-finite m1";
      } catch (const Error& e) {
        r.rcond = e.rcond;
        r.error = e.what();
      }
    }
  };
  if (threads <= 0) threads = default_threads();
  const auto workers = static_cast<std::size_t>(std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(1, candidates.size())));
  {
    std::vector<std::jthread> pool;
    for (std::size_t t = 1; t < workers; ++t) pool.emplace_back(work);
    work();
  }
  return rows;
}

TargetCalibration calibrate_lambda_target(const PreliminaryGrid& grid, double nu, double gamma,
                                          const std::vector<double>& candidates, SolverPath solver) {
  return calibrate_lambda_target(grid, mvt_integrand(nu, grid.dim()), gamma, candidates, solver);
}

TargetCalibration calibrate_lambda_target(const PreliminaryGrid& grid, const IntegrandSpec& tau, double gamma,
                                          const std::vector<double>& candidates, SolverPath solver) {
  if (candidates.empty()) fail(ErrorCode::kInvalidArgument, "candidate list is empty");
  TargetCalibration out;
  out.table = lambda_sweep(grid, tau, gamma, candidates, solver);
  double best = std::numeric_limits<double>::infinity();
  for (const SweepRow& r : out.table) {
    if (!r.ok) continue;
    const double dist = std::abs(r.m1 - 1.0);
    if (dist < best) {
      best = dist;
      out.lambda = r.lambda;
      out.m1 = r.m1;
    }
  }
  if (!std::isfinite(best)) fail(ErrorCode::kAllCandidatesFailed, "every lambda candidate failed to factorize");
  return out;
}

double solve_alpha(const PreliminaryGrid& grid, double nu, double gamma, double lambda, double quantile,
                   SolverPath solver) {
  return solve_alpha(grid, mvt_integrand(nu, grid.dim()), gamma, lambda, quantile, solver);
}

double solve_alpha(const PreliminaryGrid& grid, const IntegrandSpec& tau, double gamma, double lambda, double quantile,
                   SolverPath solver) {
  if (!(quantile > 0.0)) fail(ErrorCode::kInvalidArgument, "quantile must be positive");
  const Vector rho = residual_vector(tau, gaussian_approx(tau), grid, gamma);
  const BqWeights w = compute_weights(grid, lambda, gamma, solver);
  const double delta = w.weights.dot(rho);
  if (delta == 0.0 || !std::isfinite(delta))
    fail(ErrorCode::kDegenerateCalibration, "Delta(tau) is zero; the grid cannot tell tau from its Gaussian approximation");
  // |Delta| = q * sqrt(alpha^{-d} C1~(1)).
  return (2.0 * std::log(quantile) + w.log_c1_unit - 2.0 * std::log(std::abs(delta))) / grid.dim();
}

std::string_view to_string(CalibrationMethod method) {
  switch (method) {
    case CalibrationMethod::kL2Optimized: return "l2_optimized";
    case CalibrationMethod::kTargetM1: return "target_m1";
    case CalibrationMethod::kFixed: return "fixed";
  }
  return "fixed";
}

CalibrationMethod parse_calibration_method(std::string_view text) {
  if (text == "l2_optimized" || text == "l2") return CalibrationMethod::kL2Optimized;
  if (text == "target_m1" || text == "target") return CalibrationMethod::kTargetM1;
  if (text == "fixed") return CalibrationMethod::kFixed;
  fail(ErrorCode::kInvalidArgument, "unknown calibration method '" + std::string(text) + "'");
}

CalibrationResult calibrate(const PreliminaryGrid& grid, const CalibrateOptions& opts) {
  const int d = grid.dim();
  if (d < 1) fail(ErrorCode::kInvalidArgument, "grid is empty");
  CalibrationResult res;
  res.la_threshold = opts.la_threshold;
  res.nu = find_nu(d, opts.la_threshold);
  const double gamma = opts.gamma ? *opts.gamma : gamma_rule(res.nu, d);
  res.method = opts.method ? *opts.method
               : opts.lambda ? CalibrationMethod::kFixed
               : d <= 2     ? CalibrationMethod::kL2Optimized
                            : CalibrationMethod::kTargetM1;
  double lambda = 0.0;
  switch (res.method) {
    case CalibrationMethod::kFixed:
      if (!opts.lambda) fail(ErrorCode::kInvalidArgument, "fixed calibration needs lambda");
      lambda = *opts.lambda;
      break;
    case CalibrationMethod::kL2Optimized:
      res.l2 = calibrate_lambda_l2(grid, res.nu, gamma, opts.l2);
      lambda = res.l2->lambda;
      break;
    case CalibrationMethod::kTargetM1:
      res.target = calibrate_lambda_target(grid, res.nu, gamma, opts.candidates, opts.solver);
      lambda = res.target->lambda;
      break;
  }
  const double log_alpha = solve_alpha(grid, res.nu, gamma, lambda, opts.quantile, opts.solver);
  res.config.grid = grid;
  res.config.lambda = lambda;
  res.config.gamma = gamma;
  res.config.log_alpha = log_alpha;
  res.config.quantile = opts.quantile;
  res.config.solver = opts.solver;

  const IntegrandSpec tau = mvt_integrand(res.nu, d);
  const GaussianApprox approx = gaussian_approx(tau);
  const IntegralPosterior p = posterior(res.config, approx, residual_vector(tau, approx, grid, gamma));
  res.achieved_m1 = p.m1();
  res.boundary_residual = p.boundary_residual;
  res.rcond = p.rcond;
  return res;
}

std::string calibration_key(const PreliminaryGrid& grid, double la_threshold) {
  return "d=" + std::to_string(grid.dim()) + ";grid=" + std::string(to_string(grid.family())) +
         ";scale=" + format_double(grid.scale()) + ";nu_rule=la>=" + format_double(la_threshold) +
         ";gamma_rule=sqrt(1.5(nu+d)/(nu+d-3))";
}

nlohmann::json calibration_to_json(const CalibrationResult& r) {
  nlohmann::json doc;
  doc["dim"] = r.config.dim();
  doc["grid"] = grid_to_json(r.config.grid);
  doc["nu"] = r.nu;
  doc["gamma"] = r.config.gamma;
  doc["lambda"] = r.config.lambda;
  doc["log_alpha"] = r.config.log_alpha;
  doc["alpha"] = std::exp(r.config.log_alpha);
  doc["method"] = to_string(r.method);
  doc["achieved_m1"] = r.achieved_m1;
  doc["boundary_residual"] = r.boundary_residual;
  doc["rcond"] = r.rcond;
  doc["quantile"] = r.config.quantile;
  doc["la_threshold"] = r.la_threshold;
  doc["solver"] = to_string(r.config.solver);
  doc["key"] = calibration_key(r.config.grid, r.la_threshold);
  doc["created_by_version"] = LAPDIAG_VERSION;
  if (r.l2) {
    nlohmann::json starts = nlohmann::json::array();
    for (const auto& s : r.l2->starts)
      starts.push_back({{"start", s.start},
                        {"lambda", s.lambda},
                        {"objective", std::isfinite(s.objective) ? nlohmann::json(s.objective) : nlohmann::json()},
                        {"iterations", s.iterations},
                        {"ok", s.ok},
                        {"status", s.status}});
    doc["l2_starts"] = starts;
  }
  if (r.target) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& s : r.target->table)
      rows.push_back({{"lambda", s.lambda},
                      {"m1", s.ok ? nlohmann::json(s.m1) : nlohmann::json()},
                      {"rcond", std::isfinite(s.rcond) ? nlohmann::json(s.rcond) : nlohmann::json()},
                      {"ok", s.ok}});
    doc["sweep"] = rows;
  }
  return doc;
}

CalibrationResult calibration_from_json(const nlohmann::json& doc) {
  try {
    CalibrationResult r;
    r.config.grid = grid_from_json(doc.at("grid"));
    if (doc.at("dim").get<int>() != r.config.grid.dim())
      fail(ErrorCode::kDimensionMismatch, "calibration dimension differs from its grid");
    r.nu = doc.at("nu").get<double>();
    r.config.gamma = doc.at("gamma").get<double>();
    r.config.lambda = doc.at("lambda").get<double>();
    r.config.log_alpha = doc.contains("log_alpha") ? doc.at("log_alpha").get<double>()
                                                   : std::log(doc.at("alpha").get<double>());
    r.config.quantile = doc.value("quantile", kDefaultQuantile);
    r.config.solver = parse_solver_path(doc.value("solver", std::string("auto")));
    r.method = parse_calibration_method(doc.value("method", std::string("fixed")));
    r.achieved_m1 = doc.value("achieved_m1", std::numeric_limits<double>::quiet_NaN());
    r.boundary_residual = doc.value("boundary_residual", std::numeric_limits<double>::quiet_NaN());
    r.rcond = doc.value("rcond", std::numeric_limits<double>::quiet_NaN());
    r.la_threshold = doc.value("la_threshold", kDefaultLaThreshold);
    r.config.validate();
    return r;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kInvalidArgument, std::string("malformed calibration document: ") + e.what());
  }
}

}  // namespace lapdiag
