#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <sstream>

#include "lapdiag/calibration.hpp"
#include "lapdiag/oracles.hpp"
#include "fixtures.hpp"
#include "support.hpp"

using namespace lapdiag;
using testsupport::code_of;
using testsupport::rel_err;

namespace {

DiagnosticConfig cross_config(double lambda, double gamma = 1.2734) {
  DiagnosticConfig c;
  c.grid = cross2d_grid();
  c.lambda = lambda;
  c.gamma = gamma;
  return c;
}

void check_is_invariants(const ISResult& r) {
  CHECK(r.ci_lo <= r.estimate);
  CHECK(r.estimate <= r.ci_hi);
  CHECK(r.ess <= static_cast<double>(r.n_samples) * (1 + 1e-12));
  CHECK(r.ess > 0.0);
  CHECK(r.max_weight_fraction > 0.0);
  CHECK(r.max_weight_fraction <= 1.0);
  CHECK(r.log_weights.size() == r.n_samples);
}

}  // namespace

TEST_CASE("riemann sums of known integrals", "[oracles]") {
  const IntegrandSpec g2 = gaussian_integrand(2);
  CHECK(rel_err(riemann_integrate(g2, 10.0, 0.01), 1.0) < 1e-4);
  const IntegrandSpec tau = mvt_integrand(38, 2);
  const double box = riemann_integrate(tau, 10.0, 0.01);
  const double wide = riemann_integrate(tau, 40.0, 0.05);
  CHECK(rel_err(box, 1.0) < 1e-2);
  CHECK(rel_err(wide, 1.0) < 1e-4);
  CHECK(box < wide);
  CHECK(rel_err(riemann_integrate(banana_integrand(), 15.0, 0.01), 1.0) < 1e-3);

  const IntegrandSpec g1 = gaussian_integrand(1);
  CHECK(rel_err(riemann_integrate(g1, 10.0, 0.01), 1.0) < 1e-10);
  Vector var(3);
  var << 0.5, 1.0, 2.0;
  CHECK(rel_err(riemann_integrate(gaussian_integrand(3, var), 9.0, 0.05), 1.0) < 1e-4);
}

TEST_CASE("riemann sums converge at second order", "[oracles][property]") {
  // Truncating at +-2 leaves a boundary error of order step^2.
  auto f = [](const Eigen::Ref<const Vector>& x) { return -0.5 * x.squaredNorm(); };
  const double a = riemann_integrate(f, 2, 2.0, 0.2, 1);
  const double b = riemann_integrate(f, 2, 2.0, 0.1, 1);
  const double c = riemann_integrate(f, 2, 2.0, 0.05, 1);
  CHECK(std::abs(a - b) < 4.0 * std::abs(b - c));
  CHECK(std::abs(a - b) > 3.0 * std::abs(b - c));
  auto t = [](const Eigen::Ref<const Vector>& x) { return mvt_log_density(x, 3.0); };
  const double t1 = riemann_integrate(t, 1, 3.0, 0.1, 1);
  const double t2 = riemann_integrate(t, 1, 3.0, 0.05, 1);
  const double t3 = riemann_integrate(t, 1, 3.0, 0.025, 1);
  CHECK(std::abs(t1 - t2) < 4.0 * std::abs(t2 - t3));
}

TEST_CASE("riemann guards", "[oracles][errors]") {
  auto f = [](const Eigen::Ref<const Vector>& x) { return -0.5 * x.squaredNorm(); };
  CHECK(code_of([&] { riemann_integrate(f, 3, 10.0, 0.001); }) == ErrorCode::kCellCountOverflow);
  CHECK(code_of([&] { riemann_integrate(f, 4, 1.0, 0.5); }) == ErrorCode::kInvalidArgument);
  CHECK(code_of([&] { riemann_integrate(f, 2, 1.0, 0.0); }) == ErrorCode::kInvalidArgument);
  CHECK(riemann_integrate(f, 2, 5.0, 0.05, 1) == riemann_integrate(f, 2, 5.0, 0.05, 8));
}

TEST_CASE("L2 error vanishes for gaussians", "[oracles]") {
  Vector var(2);
  var << 2.0, 0.7;
  const IntegrandSpec g = gaussian_integrand(2, var);
  CHECK(l2_error(cross_config(2.0), g, 10.0, 0.05).value < 1e-12);
  CHECK(l2_error(cross_config(0.5, 1.0), g, 10.0, 0.05).value < 1e-12);
}

TEST_CASE("L2 error favours the calibrated length-scale", "[oracles]") {
  const IntegrandSpec tau = mvt_integrand(38, 2);
  const double mid = l2_error(cross_config(4.2241), tau, 10.0, 0.02).value;
  CHECK(mid <= l2_error(cross_config(0.0729), tau, 10.0, 0.02).value);
  CHECK(mid <= l2_error(cross_config(9.0), tau, 10.0, 0.02).value);
}

TEST_CASE("L2 error along a length-scale sweep is unimodal", "[oracles][property]") {
  const IntegrandSpec tau = mvt_integrand(38, 2);
  std::vector<double> v;
  for (int i = 0; i < 10; ++i) {
    const double lambda = 0.3 * std::pow(8.0 / 0.3, i / 9.0);
    v.push_back(l2_error(cross_config(lambda), tau, 10.0, 0.1).value);
  }
  const auto lowest = std::min_element(v.begin(), v.end()) - v.begin();
  CHECK(lowest > 0);
  CHECK(lowest < 9);
  for (long i = 1; i <= lowest; ++i) CHECK(v[i] < v[i - 1]);
  for (long i = lowest + 1; i < 10; ++i) CHECK(v[i] > v[i - 1]);
}

TEST_CASE("L2 surface export", "[oracles]") {
  const L2ErrorResult r = l2_error(cross_config(4.2241), mvt_integrand(38, 2), 10.0, 0.5, 2);
  std::istringstream in(r.surface_csv);
  std::string line;
  std::getline(in, line);
  CHECK(line == "x1,x2,value");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 20 * 20);
  CHECK(code_of([] {
          DiagnosticConfig c;
          c.grid = ckf_grid(3);
          c.lambda = 1.0;
          c.gamma = 1.2;
          l2_error(c, mvt_integrand(10, 3), 5.0, 0.5);
        }) == ErrorCode::kInvalidArgument);
}

TEST_CASE("importance sampling recovers known integrals", "[oracles]") {
  const ISResult t = importance_sample(mvt_integrand(38, 2), 100000, 5.0, 1);
  check_is_invariants(t);
  CHECK(std::abs(t.estimate - 1.0) < 3.0 * t.std_error);

  const ISResult b = importance_sample(banana_integrand(), 100000, 5.0, 2);
  check_is_invariants(b);
  CHECK(std::abs(b.estimate - 1.0) < 3.0 * b.std_error);

  Vector var(5);
  var << 0.2, 0.5, 1.0, 2.0, 4.0;
  const ISResult g = importance_sample(gaussian_integrand(5, var), 10000, 5.0, 3);
  check_is_invariants(g);
  CHECK(std::abs(g.estimate - 1.0) < 3.0 * g.std_error);
}

TEST_CASE("importance sampling with other seeds", "[oracles][property]") {
  const IntegrandSpec f = banana_integrand();
  const ISResult a = importance_sample(f, 50000, 5.0, 11);
  const ISResult b = importance_sample(f, 50000, 5.0, 12);
  CHECK(std::abs(a.estimate - b.estimate) < 6.0 * std::hypot(a.std_error, b.std_error));
  CHECK(a.estimate != b.estimate);
  const ISResult a1 = importance_sample(f, 50000, 5.0, 11, 1);
  CHECK(a1.estimate == a.estimate);
  CHECK(a1.log_weights == a.log_weights);
}

TEST_CASE("importance sampling errors", "[oracles][errors]") {
  const IntegrandSpec spike("spike",
                            [](const Eigen::Ref<const Vector>& x) {
                              return x.squaredNorm() == 0.0 ? 0.0 : -std::numeric_limits<double>::infinity();
                            },
                            Vector::Zero(2), -Matrix::Identity(2, 2));
  CHECK(code_of([&] { importance_sample(spike, 1000, 5.0, 1); }) == ErrorCode::kAllWeightsZero);
  CHECK(code_of([] { importance_sample(banana_integrand(), 1000, 0.0, 1); }) == ErrorCode::kInvalidArgument);
  CHECK(code_of([] { importance_sample(banana_integrand(), 0, 5.0, 1); }) == ErrorCode::kInvalidArgument);
}

TEST_CASE("weight histogram", "[oracles]") {
  const ISResult r = importance_sample(banana_integrand(), 5000, 5.0, 4);
  const std::string csv = weight_histogram_csv(r, 20);
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  CHECK(line == "log10_weight_lo,log10_weight_hi,count");
  long total = 0;
  int rows = 0;
  while (std::getline(in, line)) {
    total += std::stol(line.substr(line.rfind(',') + 1));
    ++rows;
  }
  CHECK(rows == 20);
  CHECK(total == 5000);
}
