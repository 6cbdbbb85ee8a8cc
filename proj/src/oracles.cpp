#include "lapdiag/oracles.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>
#include <thread>
#include <vector>

#include "lapdiag/error.hpp"
#include "util.hpp"

namespace lapdiag {

using detail::format_double;
using detail::kLog2Pi;

namespace {

struct Box {
  Eigen::Index m = 0;
  double h = 0.0;
  double halfwidth = 0.0;
  double mid(Eigen::Index k) const { return -halfwidth + (static_cast<double>(k) + 0.5) * h; }
};

Box make_box(int d, int max_d, double halfwidth, double step) {
  if (d < 1 || d > max_d) fail(ErrorCode::kInvalidArgument, "quadrature oracle supports 1 <= d <= " + std::to_string(max_d));
  if (!(halfwidth > 0.0) || !(step > 0.0)) fail(ErrorCode::kInvalidArgument, "halfwidth and step must be positive");
  const double per_axis = std::round(2.0 * halfwidth / step);
  if (per_axis < 1.0) fail(ErrorCode::kInvalidArgument, "step exceeds the box");
  const double cells = std::pow(per_axis, d);
  if (cells > kMaxRiemannCells)
    fail(ErrorCode::kCellCountOverflow, "quadrature box has " + format_double(cells) + " cells, above 1e8");
  Box b;
  b.m = static_cast<Eigen::Index>(per_axis);
  b.h = 2.0 * halfwidth / per_axis;
  b.halfwidth = halfwidth;
  return b;
}

// Runs body(slab) for every index of the first axis and returns the per-slab
// results in order, so the final sum does not depend on the thread count.
template <class F>
std::vector<double> over_slabs(Eigen::Index m, int threads, F body) {
  std::vector<double> out(static_cast<std::size_t>(m), 0.0);
  std::atomic<Eigen::Index> next{0};
  auto work = [&] {
    for (Eigen::Index k = next++; k < m; k = next++) out[static_cast<std::size_t>(k)] = body(k);
  };
  if (threads <= 0) threads = default_threads();
  const int workers = static_cast<int>(std::clamp<Eigen::Index>(threads, 1, m));
  {
    std::vector<std::jthread> pool;
    for (int t = 1; t < workers; ++t) pool.emplace_back(work);
    work();
  }
  return out;
}

double ordered_sum(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

}  // namespace

double riemann_integrate(const IntegrandSpec::PointFn& log_f, int d, double halfwidth, double step, int threads) {
  const Box box = make_box(d, 3, halfwidth, step);
  const Eigen::Index inner = d == 1 ? 1 : static_cast<Eigen::Index>(std::pow(static_cast<double>(box.m), d - 1));
  const auto slabs = over_slabs(box.m, threads, [&](Eigen::Index k) {
    Vector x(d);
    x[0] = box.mid(k);
    double acc = 0.0;
    for (Eigen::Index r = 0; r < inner; ++r) {
      Eigen::Index rem = r;
      for (int j = d - 1; j >= 1; --j) {
        x[j] = box.mid(rem % box.m);
        rem /= box.m;
      }
      const double lf = log_f(x);
      if (std::isnan(lf) || lf == std::numeric_limits<double>::infinity())
        fail(ErrorCode::kNonFiniteLogF, "log f is not finite inside the quadrature box");
      acc += std::exp(lf);
    }
    return acc;
  });
  return ordered_sum(slabs) * std::pow(box.h, d);
}

double riemann_integrate(const IntegrandSpec& spec, double halfwidth, double step, int threads) {
  return riemann_integrate([&spec](const Eigen::Ref<const Vector>& x) { return spec.log_f(x); }, spec.dim(), halfwidth,
                           step, threads);
}

L2ErrorResult l2_error(const DiagnosticConfig& config, const IntegrandSpec& spec, double halfwidth, double step,
                       int csv_stride, int threads) {
  config.validate();
  const int d = spec.dim();
  if (d != config.dim()) fail(ErrorCode::kDimensionMismatch, "configuration and integrand dimensions differ");
  const Box box = make_box(d, 2, halfwidth, step);
  const GaussianApprox approx = gaussian_approx(spec);
  const PreliminaryGrid& grid = config.grid;
  const Vector rho = residual_vector(spec, approx, grid, config.gamma);

  Eigen::LLT<Matrix> llt(gram_matrix(grid, config.lambda));
  if (llt.info() != Eigen::Success) fail(ErrorCode::kGramNotPD, "Gram matrix is not numerically positive definite");
  const Vector beta = llt.solve(rho);

  const Matrix tinv = approx.eigvals.cwiseSqrt().cwiseInverse().asDiagonal() * approx.eigvecs.transpose();
  const double f_hat = std::exp(approx.log_f_mode);
  const double inv = 1.0 / (2.0 * config.lambda * config.lambda);
  const Matrix& pts = grid.points();
  const Eigen::Index inner = d == 1 ? 1 : box.m;

  // m1^x g - f at a point in the original coordinates.
  auto diff_at = [&](const Vector& x) {
    const Vector s = tinv * (x - approx.mode);
    double kb = 0.0;
    for (Eigen::Index i = 0; i < pts.rows(); ++i) kb += beta[i] * std::exp(-(s - pts.row(i).transpose()).squaredNorm() * inv);
    const double model = f_hat * (std::exp(-0.5 * s.squaredNorm()) + std::exp(log_measure_density(s, config.gamma)) * kb);
    const double lf = spec.log_f(x);
    return model - (lf == -std::numeric_limits<double>::infinity() ? 0.0 : std::exp(lf));
  };

  const auto slabs = over_slabs(box.m, threads, [&](Eigen::Index k) {
    Vector x(d);
    x[0] = box.mid(k);
    double acc = 0.0;
    for (Eigen::Index r = 0; r < inner; ++r) {
      if (d == 2) x[1] = box.mid(r);
      const double v = diff_at(x);
      acc += v * v;
    }
    return acc;
  });

  L2ErrorResult out;
  out.value = ordered_sum(slabs) * std::pow(box.h, d);
  if (csv_stride > 0) {
    std::ostringstream os;
    os << (d == 2 ? "x1,x2,value\n" : "x1,value\n");
    Vector x(d);
    for (Eigen::Index k = 0; k < box.m; k += csv_stride) {
      x[0] = box.mid(k);
      for (Eigen::Index r = 0; r < inner; r += (d == 2 ? csv_stride : 1)) {
        if (d == 2) x[1] = box.mid(r);
        os << format_double(x[0]) << ',';
        if (d == 2) os << format_double(x[1]) << ',';
        os << format_double(diff_at(x)) << '\n';
      }
    }
    out.surface_csv = os.str();
  }
  return out;
}

ISResult importance_sample(const IntegrandSpec& spec, std::int64_t n_samples, double df, std::uint64_t seed,
                           int threads) {
  if (n_samples < 2) fail(ErrorCode::kInvalidArgument, "importance sampling needs at least two samples");
  if (!(df > 0.0) || !std::isfinite(df)) fail(ErrorCode::kInvalidArgument, "proposal degrees of freedom must be positive");
  const int d = spec.dim();
  const GaussianApprox approx = gaussian_approx(spec);
  const double log_q_const = std::lgamma(0.5 * (df + d)) - std::lgamma(0.5 * df) - 0.5 * d * std::log(df * std::numbers::pi) -
                             0.5 * approx.log_det_neg_hinv;

  constexpr std::int64_t kBlock = 4096;
  const std::int64_t blocks = (n_samples + kBlock - 1) / kBlock;
  Matrix xs(n_samples, d);
  Vector log_q(n_samples);
  for (std::int64_t b = 0; b < blocks; ++b) {
    std::seed_seq sseq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                       static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
    std::mt19937_64 rng(sseq);
    std::normal_distribution<double> normal;
    std::chi_squared_distribution<double> chi2(df);
    const std::int64_t end = std::min(n_samples, (b + 1) * kBlock);
    Vector z(d);
    for (std::int64_t i = b * kBlock; i < end; ++i) {
      for (int j = 0; j < d; ++j) z[j] = normal(rng);
      const double w = chi2(rng) / df;
      const Vector u = z / std::sqrt(w);
      xs.row(i) = (approx.mode + approx.transform * u).transpose();
      log_q[i] = log_q_const - 0.5 * (df + d) * std::log1p(u.squaredNorm() / df);
    }
  }
  const Vector log_f = spec.log_f_batch(xs, threads <= 0 ? default_threads() : threads);

  ISResult out;
  out.n_samples = n_samples;
  out.log_weights.resize(n_samples);
  double shift = -std::numeric_limits<double>::infinity();
  for (std::int64_t i = 0; i < n_samples; ++i) {
    const double lf = log_f[i];
    if (std::isnan(lf) || lf == std::numeric_limits<double>::infinity())
      fail(ErrorCode::kNonFiniteLogF, "log f is not finite at importance sample " + std::to_string(i));
    out.log_weights[i] = lf - log_q[i];
    shift = std::max(shift, out.log_weights[i]);
  }
  if (shift == -std::numeric_limits<double>::infinity()) fail(ErrorCode::kAllWeightsZero, "every importance weight is zero");

  const Vector scaled = (out.log_weights.array() - shift).exp();
  const double sum = scaled.sum();
  const double mean = sum / static_cast<double>(n_samples);
  const double var = (scaled.array() - mean).square().sum() / static_cast<double>(n_samples - 1);
  const double scale = std::exp(shift);
  out.estimate = mean * scale;
  out.std_error = std::sqrt(var / static_cast<double>(n_samples)) * scale;
  out.ci_lo = out.estimate - kDefaultQuantile * out.std_error;
  out.ci_hi = out.estimate + kDefaultQuantile * out.std_error;
  out.ess = sum * sum / scaled.squaredNorm();
  out.max_weight_fraction = scaled.maxCoeff() / sum;
  return out;
}

std::string weight_histogram_csv(const ISResult& result, int bins) {
  if (bins < 1) fail(ErrorCode::kInvalidArgument, "histogram needs at least one bin");
  const Vector& lw = result.log_weights;
  const double shift = lw.maxCoeff();
  const double log_sum = shift + std::log((lw.array() - shift).exp().sum());
  std::vector<double> vals;
  for (Eigen::Index i = 0; i < lw.size(); ++i)
    if (std::isfinite(lw[i])) vals.push_back((lw[i] - log_sum) / std::numbers::ln10);
  std::ostringstream os;
  os << "log10_weight_lo,log10_weight_hi,count\n";
  if (vals.empty()) return os.str();
  const auto [lo_it, hi_it] = std::minmax_element(vals.begin(), vals.end());
  const double lo = *lo_it;
  const double hi = *hi_it > lo ? *hi_it : lo + 1.0;
  std::vector<long long> counts(static_cast<std::size_t>(bins), 0);
  for (double v : vals) {
    auto k = static_cast<std::size_t>((v - lo) / (hi - lo) * bins);
    counts[std::min(k, counts.size() - 1)]++;
  }
  for (int k = 0; k < bins; ++k) {
    os << format_double(lo + (hi - lo) * k / bins) << ',' << format_double(lo + (hi - lo) * (k + 1) / bins) << ','
       << counts[static_cast<std::size_t>(k)] << '\n';
  }
  return os.str();
}

}  // namespace lapdiag
