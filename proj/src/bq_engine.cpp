#include "lapdiag/bq_engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <numbers>
#include <sstream>
#include <thread>

#include "lapdiag/error.hpp"
#include "util.hpp"

namespace lapdiag {

using detail::format_double;
using detail::kLog2Pi;

namespace {

void check_positive(double v, const char* what) {
  if (!(v > 0.0) || !std::isfinite(v)) fail(ErrorCode::kInvalidArgument, std::string(what) + " must be positive");
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Kernel means z_i at alpha = 1.
Vector kernel_means(const Matrix& pts, double lambda, double gamma) {
  const int d = static_cast<int>(pts.cols());
  const double l2 = lambda * lambda;
  const double g2 = gamma * gamma;
  const double log_pre = 0.5 * d * std::log(l2 / (l2 + g2));
  Vector z(pts.rows());
  for (Eigen::Index i = 0; i < pts.rows(); ++i) z[i] = std::exp(log_pre - pts.row(i).squaredNorm() / (2.0 * (l2 + g2)));
  return z;
}

}  // namespace

std::string_view to_string(SolverPath path) {
  switch (path) {
    case SolverPath::kAuto: return "auto";
    case SolverPath::kDense: return "dense";
    case SolverPath::kFskq: return "fskq";
  }
  return "auto";
}

SolverPath parse_solver_path(std::string_view text) {
  if (text == "auto") return SolverPath::kAuto;
  if (text == "dense") return SolverPath::kDense;
  if (text == "fskq") return SolverPath::kFskq;
  fail(ErrorCode::kInvalidArgument, "unknown solver '" + std::string(text) + "'");
}

void DiagnosticConfig::validate() const {
  check_positive(lambda, "lambda");
  check_positive(gamma, "gamma");
  check_positive(quantile, "quantile");
  if (!std::isfinite(log_alpha)) fail(ErrorCode::kInvalidArgument, "log_alpha must be finite");
}

double log_kernel(const Eigen::Ref<const Vector>& u, const Eigen::Ref<const Vector>& v, double lambda,
                  double log_alpha) {
  check_positive(lambda, "lambda");
  if (u.size() != v.size()) fail(ErrorCode::kDimensionMismatch, "kernel arguments differ in dimension");
  return -static_cast<double>(u.size()) * log_alpha - (u - v).squaredNorm() / (2.0 * lambda * lambda);
}

double log_kernel_mean(const Eigen::Ref<const Vector>& s_star, double lambda, double log_alpha, double gamma) {
  check_positive(lambda, "lambda");
  check_positive(gamma, "gamma");
  const double d = static_cast<double>(s_star.size());
  const double l2 = lambda * lambda;
  const double g2 = gamma * gamma;
  return -d * log_alpha + 0.5 * d * std::log(l2 / (l2 + g2)) - s_star.squaredNorm() / (2.0 * (l2 + g2));
}

double log_double_kernel_mean(double lambda, double log_alpha, double gamma, int d) {
  check_positive(lambda, "lambda");
  check_positive(gamma, "gamma");
  const double l2 = lambda * lambda;
  return -d * log_alpha + 0.5 * d * std::log(l2 / (l2 + 2.0 * gamma * gamma));
}

double log_prior_mean_interrogation(const Eigen::Ref<const Vector>& s_star, double gamma) {
  check_positive(gamma, "gamma");
  const double d = static_cast<double>(s_star.size());
  return 0.5 * d * kLog2Pi + d * std::log(gamma) - 0.5 * s_star.squaredNorm() * (1.0 - 1.0 / (gamma * gamma));
}

double log_measure_density(const Eigen::Ref<const Vector>& s_star, double gamma) {
  check_positive(gamma, "gamma");
  const double d = static_cast<double>(s_star.size());
  return -0.5 * d * kLog2Pi - d * std::log(gamma) - s_star.squaredNorm() / (2.0 * gamma * gamma);
}

Vector residuals_from_log_values(const PreliminaryGrid& grid, const Vector& log_f, double log_f_mode, double gamma) {
  check_positive(gamma, "gamma");
  const Matrix& pts = grid.points();
  if (log_f.size() != pts.rows()) fail(ErrorCode::kDimensionMismatch, "one log-value per grid point is required");
  const int d = grid.dim();
  const double base = 0.5 * d * kLog2Pi + d * std::log(gamma);
  Vector rho(pts.rows());
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    const double lf = log_f[i];
    if (std::isnan(lf) || lf == std::numeric_limits<double>::infinity()) {
      Error e(ErrorCode::kNonFiniteLogF, "log f is " + format_double(lf) + " at interrogation point " + std::to_string(i));
      e.point_index = static_cast<std::size_t>(i);
      throw e;
    }
    const double r2 = pts.row(i).squaredNorm();
    // (f(s)/f(mode) - exp(-r^2/2)) / g(s*), with g the standardized measure.
    const double scale = base + r2 / (2.0 * gamma * gamma);
    const double ratio_term = lf == -std::numeric_limits<double>::infinity() ? 0.0 : std::exp(lf - log_f_mode + scale);
    rho[i] = ratio_term - std::exp(scale - 0.5 * r2);
  }
  return rho;
}

Vector residual_vector(const IntegrandSpec& spec, const GaussianApprox& approx, const PreliminaryGrid& grid,
                       double gamma, int threads) {
  const InterrogationGrid ig = to_interrogation(grid, approx);
  const Vector lf = spec.log_f_batch(ig.points, threads);
  return residuals_from_log_values(grid, lf, approx.log_f_mode, gamma);
}

Matrix gram_matrix(const PreliminaryGrid& grid, double lambda) {
  check_positive(lambda, "lambda");
  const Matrix& pts = grid.points();
  const Eigen::Index n = pts.rows();
  const double inv = 1.0 / (2.0 * lambda * lambda);
  Matrix k(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    k(j, j) = 1.0;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      const double v = std::exp(-(pts.row(i) - pts.row(j)).squaredNorm() * inv);
      k(i, j) = v;
      k(j, i) = v;
    }
  }
  return k;
}

namespace {

void finish_weights(BqWeights& out, const PreliminaryGrid& grid, const Vector& z, double lambda, double gamma) {
  out.dim = grid.dim();
  out.log_c0 = log_double_kernel_mean(lambda, 0.0, gamma, grid.dim());
  const double c1 = std::exp(out.log_c0) - out.weights.dot(z);
  if (!(c1 > 0.0)) {
    Error e(ErrorCode::kGramNotPD, "posterior variance is not positive (C0 - z'K^-1 z = " + format_double(c1) +
                                       "); the Gram matrix is numerically singular");
    e.rcond = out.rcond;
    throw e;
  }
  out.log_c1_unit = std::log(c1);
  if (out.orbit_weights.empty()) {
    for (std::size_t o = 0; o < grid.orbits().size(); ++o)
      out.orbit_weights.push_back(out.weights.segment(grid.offsets()[o], grid.orbits()[o].size()).mean());
  }
}

}  // namespace

BqWeights dense_weights(const PreliminaryGrid& grid, double lambda, double gamma, bool jitter) {
  check_positive(gamma, "gamma");
  Matrix k = gram_matrix(grid, lambda);
  if (jitter) k.diagonal().array() += 1e-12 * k.diagonal().maxCoeff();
  const Vector z = kernel_means(grid.points(), lambda, gamma);
  Eigen::LLT<Matrix> llt(k);
  if (llt.info() != Eigen::Success) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(k, Eigen::EigenvaluesOnly);
    const auto& ev = es.eigenvalues();
    Error e(ErrorCode::kGramNotPD, "Gram matrix is not numerically positive definite (lambda = " +
                                       format_double(lambda) + "); consider the jitter option");
    e.rcond = std::max(0.0, ev.minCoeff() / ev.maxCoeff());
    throw e;
  }
  BqWeights out;
  out.rcond = llt.rcond();
  out.solver = SolverPath::kDense;
  out.weights = llt.solve(z);
  if (!out.weights.allFinite()) {
    Error e(ErrorCode::kGramNotPD, "Gram solve produced non-finite weights");
    e.rcond = out.rcond;
    throw e;
  }
  finish_weights(out, grid, z, lambda, gamma);
  return out;
}

BqWeights fskq_weights(const PreliminaryGrid& grid, double lambda, double gamma) {
  check_positive(lambda, "lambda");
  check_positive(gamma, "gamma");
  const Matrix& pts = grid.points();
  const auto m = static_cast<Eigen::Index>(grid.orbits().size());
  const double inv = 1.0 / (2.0 * lambda * lambda);
  Matrix kr(m, m);
  Vector zr(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const Vector rep = grid.orbits()[static_cast<std::size_t>(i)].points.row(0).transpose();
    zr[i] = std::exp(log_kernel_mean(rep, lambda, 0.0, gamma));
    for (Eigen::Index j = 0; j < m; ++j) {
      const Eigen::Index off = grid.offsets()[static_cast<std::size_t>(j)];
      const Eigen::Index size = grid.orbits()[static_cast<std::size_t>(j)].size();
      double acc = 0.0;
      for (Eigen::Index r = off; r < off + size; ++r) acc += std::exp(-(pts.row(r).transpose() - rep).squaredNorm() * inv);
      kr(i, j) = acc;
    }
  }
  Eigen::FullPivLU<Matrix> lu(kr);
  const double rc = lu.rcond();
  if (!lu.isInvertible() || !(rc > std::numeric_limits<double>::epsilon())) {
    Error e(ErrorCode::kReducedSystemSingular, "reduced orbit system is singular");
    e.rcond = rc;
    throw e;
  }
  const Vector wr = lu.solve(zr);
  if (!wr.allFinite()) fail(ErrorCode::kReducedSystemSingular, "reduced orbit system produced non-finite weights");

  BqWeights out;
  out.rcond = rc;
  out.solver = SolverPath::kFskq;
  out.weights.resize(pts.rows());
  for (Eigen::Index j = 0; j < m; ++j) {
    const auto ju = static_cast<std::size_t>(j);
    out.weights.segment(grid.offsets()[ju], grid.orbits()[ju].size()).setConstant(wr[j]);
    out.orbit_weights.push_back(wr[j]);
  }
  finish_weights(out, grid, kernel_means(pts, lambda, gamma), lambda, gamma);
  return out;
}

BqWeights compute_weights(const PreliminaryGrid& grid, double lambda, double gamma, SolverPath path, bool jitter) {
  if (path == SolverPath::kAuto) path = grid.size() <= kDenseLimit ? SolverPath::kDense : SolverPath::kFskq;
  return path == SolverPath::kDense ? dense_weights(grid, lambda, gamma, jitter) : fskq_weights(grid, lambda, gamma);
}

std::vector<double> fskq_orbit_weights(const PreliminaryGrid& grid, double lambda, double log_alpha, double gamma) {
  if (!std::isfinite(log_alpha)) fail(ErrorCode::kInvalidArgument, "log_alpha must be finite");
  return fskq_weights(grid, lambda, gamma).orbit_weights;
}

double two_sided_p(double t) { return std::erfc(std::abs(t) / std::numbers::sqrt2); }

double log_two_sided_p(double t) {
  const double x = std::abs(t) / std::numbers::sqrt2;
  const double p = std::erfc(x);
  if (p > 1e-300) return std::log(p);
  // Asymptotic series of erfc for large x.
  const double x2 = x * x;
  const double series = 1.0 - 1.0 / (2.0 * x2) + 3.0 / (4.0 * x2 * x2) - 15.0 / (8.0 * x2 * x2 * x2);
  return -x2 - std::log(x * std::sqrt(std::numbers::pi)) + std::log(series);
}

double IntegralPosterior::m1() const { return std::exp(log_la) * m1_rel; }
double IntegralPosterior::c1() const { return std::exp(log_c1_rel + 2.0 * log_la); }

IntegralPosterior posterior_from_weights(const BqWeights& weights, double log_alpha, double quantile, double log_la,
                                         double log_scale_n, const Vector& residuals) {
  if (residuals.size() != weights.weights.size())
    fail(ErrorCode::kDimensionMismatch, "residual vector length " + std::to_string(residuals.size()) +
                                            " differs from the grid size " + std::to_string(weights.weights.size()));
  if (!std::isfinite(log_alpha)) fail(ErrorCode::kInvalidArgument, "log_alpha must be finite");
  check_positive(quantile, "quantile");
  IntegralPosterior p;
  p.quantile = quantile;
  p.log_la = log_la;
  p.rcond = weights.rcond;
  p.solver = weights.solver;
  p.delta = weights.weights.dot(residuals);
  p.log_c1_tilde = -weights.dim * log_alpha + weights.log_c1_unit;
  const double sd = std::exp(0.5 * p.log_c1_tilde);
  p.epsilon = quantile * sd;
  // L(f) / N = (2 pi)^{d/2}.
  const double log_ratio = log_scale_n - log_la;
  p.m1_rel = 1.0 + p.delta * std::exp(log_ratio);
  p.log_c1_rel = p.log_c1_tilde + 2.0 * log_ratio;
  p.c1_rel = std::exp(p.log_c1_rel);
  p.significance = two_sided_p(quantile);

  const double abs_delta = std::abs(p.delta);
  if (abs_delta == 0.0) {
    p.p_value = 1.0;
    p.log_p_value = 0.0;
    p.boundary_residual = -1.0;
    return p;
  }
  // t = |Delta| / sqrt(C1~), formed in log space.
  const double t = std::exp(std::log(abs_delta) - 0.5 * p.log_c1_tilde);
  p.p_value = two_sided_p(t);
  p.log_p_value = log_two_sided_p(t);
  p.boundary_residual = (abs_delta - p.epsilon) / p.epsilon;
  p.boundary = std::abs(p.boundary_residual) <= 1e-10;
  p.reject = !p.boundary && abs_delta > p.epsilon;
  return p;
}

IntegralPosterior posterior(const DiagnosticConfig& config, const GaussianApprox& approx, const Vector& residuals) {
  config.validate();
  if (approx.dim() != config.dim()) fail(ErrorCode::kDimensionMismatch, "configuration and integrand dimensions differ");
  const BqWeights w = compute_weights(config.grid, config.lambda, config.gamma, config.solver, config.jitter);
  return posterior_from_weights(w, config.log_alpha, config.quantile, log_laplace(approx), approx.log_scale_n, residuals);
}

int default_threads() {
  if (const char* env = std::getenv("LG_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<int>(std::min<long>(v, 1024));
  }
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

DiagnosticReport diagnose(const IntegrandSpec& spec, const DiagnosticConfig& config, int threads) {
  config.validate();
  if (spec.dim() != config.dim())
    fail(ErrorCode::kDimensionMismatch, "integrand dimension " + std::to_string(spec.dim()) +
                                            " differs from calibrated dimension " + std::to_string(config.dim()));
  if (threads <= 0) threads = default_threads();
  const GaussianApprox approx = gaussian_approx(spec);

  auto t0 = std::chrono::steady_clock::now();
  const Vector rho = residual_vector(spec, approx, config.grid, config.gamma, threads);
  const double t_eval = seconds_since(t0);

  t0 = std::chrono::steady_clock::now();
  const BqWeights w = compute_weights(config.grid, config.lambda, config.gamma, config.solver, config.jitter);
  DiagnosticReport rep;
  rep.posterior = posterior_from_weights(w, config.log_alpha, config.quantile, log_laplace(approx),
                                         approx.log_scale_n, rho);
  rep.seconds_solve = seconds_since(t0);
  rep.seconds_evaluate = t_eval;

  rep.integrand = spec.name();
  rep.dim = spec.dim();
  rep.log_f_mode = approx.log_f_mode;
  rep.log_scale_n = approx.log_scale_n;
  rep.lambda = config.lambda;
  rep.gamma = config.gamma;
  rep.log_alpha = config.log_alpha;
  rep.grid_family = config.grid.family();
  rep.grid_scale = config.grid.scale();
  rep.n_points = config.grid.size();
  rep.warnings = config.grid.warnings();

  const double to_rel = std::exp(-0.5 * spec.dim() * kLog2Pi);
  const double to_abs = std::exp(approx.log_scale_n);
  for (std::size_t o = 0; o < config.grid.orbits().size(); ++o) {
    const Orbit& orbit = config.grid.orbits()[o];
    const Eigen::Index off = config.grid.offsets()[o];
    const double wr = w.weights.segment(off, orbit.size()).dot(rho.segment(off, orbit.size()));
    OrbitContribution c;
    c.generator = orbit.generator;
    c.size = orbit.size();
    c.radius = orbit.radius();
    c.weight = w.orbit_weights[o];
    c.contribution_rel = wr * to_rel;
    c.contribution_abs = wr * to_abs;
    rep.orbits.push_back(std::move(c));
  }
  return rep;
}

namespace {

nlohmann::json finite_or_null(double v) {
  if (std::isfinite(v)) return v;
  return nullptr;
}

}  // namespace

nlohmann::json report_to_json(const DiagnosticReport& r) {
  const IntegralPosterior& p = r.posterior;
  nlohmann::json orbits = nlohmann::json::array();
  for (const auto& o : r.orbits) {
    orbits.push_back({{"generator", o.generator},
                      {"size", o.size},
                      {"radius", o.radius},
                      {"weight", finite_or_null(o.weight)},
                      {"contribution_rel", finite_or_null(o.contribution_rel)},
                      {"contribution_abs", finite_or_null(o.contribution_abs)}});
  }
  nlohmann::json doc;
  doc["integrand"] = r.integrand;
  doc["dim"] = r.dim;
  doc["decision"] = p.reject ? "reject" : "accept";
  doc["reject"] = p.reject;
  doc["boundary"] = p.boundary;
  doc["boundary_residual"] = finite_or_null(p.boundary_residual);
  doc["delta"] = finite_or_null(p.delta);
  doc["epsilon"] = finite_or_null(p.epsilon);
  doc["quantile"] = p.quantile;
  doc["p_value"] = finite_or_null(p.p_value);
  doc["log_p_value"] = finite_or_null(p.log_p_value);
  doc["significance"] = p.significance;
  doc["m1_rel"] = finite_or_null(p.m1_rel);
  doc["c1_rel"] = finite_or_null(p.c1_rel);
  doc["log_c1_rel"] = finite_or_null(p.log_c1_rel);
  doc["log_la"] = finite_or_null(p.log_la);
  doc["la"] = finite_or_null(std::exp(p.log_la));
  doc["m1"] = finite_or_null(p.m1());
  doc["c1"] = finite_or_null(p.c1());
  doc["log_scale_n"] = finite_or_null(r.log_scale_n);
  doc["log_f_mode"] = finite_or_null(r.log_f_mode);
  doc["rcond"] = finite_or_null(p.rcond);
  doc["solver"] = to_string(p.solver);
  doc["config"] = {{"lambda", r.lambda},
                   {"gamma", r.gamma},
                   {"log_alpha", r.log_alpha},
                   {"alpha", std::exp(r.log_alpha)},
                   {"grid_family", to_string(r.grid_family)},
                   {"grid_scale", r.grid_scale},
                   {"n_points", r.n_points}};
  doc["orbits"] = orbits;
  doc["warnings"] = r.warnings;
  return doc;
}

std::string orbit_contributions_csv(const DiagnosticReport& r) {
  std::ostringstream os;
  os << "generator,size,radius,weight,contribution_rel,contribution_abs\n";
  for (const auto& o : r.orbits) {
    std::string g;
    for (std::size_t i = 0; i < o.generator.size(); ++i) g += (i ? ";" : "") + format_double(o.generator[i]);
    os << g << ',' << o.size << ',' << format_double(o.radius) << ',' << format_double(o.weight) << ','
       << format_double(o.contribution_rel) << ',' << format_double(o.contribution_abs) << '\n';
  }
  return os.str();
}

}  // namespace lapdiag
