#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <random>

#include "lapdiag/error.hpp"
#include "lapdiag/integrand.hpp"
#include "fixtures.hpp"
#include "support.hpp"

using namespace lapdiag;
using Catch::Approx;

using testsupport::code_of;

TEST_CASE("identity hessian gives identity transform", "[integrand]") {
  const GaussianApprox a = gaussian_approx(Vector::Zero(2), -Matrix::Identity(2, 2), 0.0);
  CHECK((a.transform - Matrix::Identity(2, 2)).norm() == 0.0);
  CHECK(a.log_det_neg_hinv == 0.0);
  CHECK(a.log_scale_n == 0.0);
}

TEST_CASE("banana gaussian approximation", "[integrand]") {
  const IntegrandSpec b = banana_integrand();
  const GaussianApprox a = gaussian_approx(b);
  Matrix t(2, 2);
  t << std::sqrt(3.0), 0.0, 0.0, 1.0;
  CHECK((a.transform - t).norm() < 1e-14);
  CHECK(std::exp(a.log_det_neg_hinv) == Approx(3.0).epsilon(1e-14));
  CHECK(a.mode[0] == 0.0);
  CHECK(a.mode[1] == -1.5);
}

TEST_CASE("multivariate t gaussian approximation", "[integrand]") {
  const GaussianApprox a = gaussian_approx(mvt_integrand(38, 2));
  CHECK((a.transform - std::sqrt(0.95) * Matrix::Identity(2, 2)).norm() < 1e-14);
}

TEST_CASE("gaussian approximation reconstructs -H^-1 for random hessians", "[integrand][property]") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const int d = 1 + trial % 7;
    const Matrix sigma = testsupport::random_spd(d, rng);
    const Matrix h = -sigma.inverse();
    const GaussianApprox a = gaussian_approx(Vector::Zero(d), h, 0.3);
    const Matrix recon = a.eigvecs * a.eigvals.asDiagonal() * a.eigvecs.transpose();
    CHECK((recon - sigma).norm() <= 1e-8 * sigma.norm());
    CHECK((a.transform * a.transform.transpose() - sigma).norm() <= 1e-8 * sigma.norm());
    for (int i = 1; i < d; ++i) CHECK(a.eigvals[i - 1] >= a.eigvals[i]);
    CHECK((a.eigvecs.transpose() * a.eigvecs - Matrix::Identity(d, d)).norm() < 1e-10);
    // Sign convention: first clearly nonzero component of each eigenvector is positive.
    for (int k = 0; k < d; ++k) {
      for (int i = 0; i < d; ++i) {
        if (std::abs(a.eigvecs(i, k)) > 1e-12) {
          CHECK(a.eigvecs(i, k) > 0.0);
          break;
        }
      }
    }
    const Vector x = Vector::Random(d);
    CHECK((a.to_standard(a.to_original(x)) - x).norm() < 1e-10 * (1.0 + x.norm()));
  }
}

TEST_CASE("gaussian approximation is deterministic", "[integrand]") {
  std::mt19937_64 rng(3);
  const Matrix h = -testsupport::random_spd(4, rng);
  const GaussianApprox a = gaussian_approx(Vector::Zero(4), h, 0.0);
  const GaussianApprox b = gaussian_approx(Vector::Zero(4), h, 0.0);
  CHECK(a.transform == b.transform);
}

TEST_CASE("hessian must be negative definite and finite", "[integrand][errors]") {
  Matrix h(2, 2);
  h << -1.0, 0.0, 0.0, 0.5;
  CHECK(code_of([&] { gaussian_approx(Vector::Zero(2), h, 0.0); }) == ErrorCode::kNotNegativeDefinite);
  h << -1.0, 0.0, 0.0, -1e-14;
  CHECK(code_of([&] { gaussian_approx(Vector::Zero(2), h, 0.0); }) == ErrorCode::kNotNegativeDefinite);
  h << -1.0, NAN, NAN, -1.0;
  CHECK(code_of([&] { gaussian_approx(Vector::Zero(2), h, 0.0); }) == ErrorCode::kNonFiniteHessian);
  h << -1.0, 0.0, 0.0, -1.0;
  auto point = [](const Eigen::Ref<const Vector>& x) { return -0.5 * x.squaredNorm(); };
  CHECK(code_of([&] { IntegrandSpec("bad", point, Vector::Zero(3), h); }) == ErrorCode::kDimensionMismatch);
  auto inf_at_mode = [](const Eigen::Ref<const Vector>&) { return -INFINITY; };
  CHECK(code_of([&] { IntegrandSpec("bad", inf_at_mode, Vector::Zero(2), h); }) == ErrorCode::kNonFiniteLogF);
}

TEST_CASE("hessian is symmetrized on ingest", "[integrand]") {
  Matrix h(2, 2);
  h << -2.0, 0.3 + 1e-12, 0.3, -1.0;
  const IntegrandSpec s("q", [](const Eigen::Ref<const Vector>& x) { return -0.5 * x.squaredNorm(); }, Vector::Zero(2), h);
  CHECK(s.hessian()(0, 1) == s.hessian()(1, 0));
}

TEST_CASE("laplace approximation values", "[integrand]") {
  CHECK(std::abs(log_laplace(gaussian_approx(gaussian_integrand(2)))) < 1e-14);
  CHECK(std::exp(log_laplace(gaussian_approx(mvt_integrand(38, 2)))) == Approx(0.95).epsilon(1e-12));
  CHECK(std::abs(std::exp(log_laplace(gaussian_approx(banana_integrand()))) - 1.0) < 1e-10);
}

TEST_CASE("laplace approximation is exact for gaussians", "[integrand][property]") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.1, 10.0);
  for (int d = 1; d <= 8; ++d) {
    Vector var(d);
    for (int i = 0; i < d; ++i) var[i] = u(rng);
    const double la = std::exp(log_laplace(gaussian_approx(gaussian_integrand(d, var))));
    CHECK(std::abs(la - 1.0) <= 1e-10);
  }
}

TEST_CASE("multivariate t density", "[integrand]") {
  Vector zero1 = Vector::Zero(1);
  CHECK(mvt_log_density(zero1, 1.0) == Approx(-std::log(std::numbers::pi)).epsilon(1e-14));

  Vector x(2);
  x << 1.0, 1.0;
  const double normal = -std::log(2.0 * std::numbers::pi) - 1.0;
  CHECK(std::abs(mvt_log_density(x, 1e8) - normal) < 1e-6);

  const double total = testsupport::midpoint_2d(
      [](double a, double b) {
        Vector p(2);
        p << a, b;
        return std::exp(mvt_log_density(p, 38.0));
      },
      0.0, 0.0, 40.0, 0.05);
  CHECK(testsupport::rel_err(total, 1.0) < 1e-3);

  CHECK_THROWS_AS(mvt_log_density(x, 0.0), Error);
  CHECK_THROWS_AS(mvt_log_density(x, -2.0), Error);
}

TEST_CASE("multivariate t laplace ratio", "[integrand]") {
  CHECK(std::abs(mvt_laplace(38, 2) - 0.95) < 1e-12);
  CHECK(std::abs(mvt_laplace(25921, 72) - 0.95) < 5e-4);
  CHECK(std::abs(mvt_laplace(1e6, 2) - 1.0) < 1e-5);
  CHECK_THROWS_AS(mvt_laplace(0.0, 2), Error);
}

TEST_CASE("laplace ratio is monotone in nu and d", "[integrand][property]") {
  for (int d = 1; d <= 20; ++d)
    for (int nu = 5; nu < 100; ++nu) CHECK(mvt_laplace(nu + 1, d) > mvt_laplace(nu, d));
  for (int nu = 5; nu <= 100; ++nu)
    for (int d = 1; d < 20; ++d) CHECK(mvt_laplace(nu, d + 1) < mvt_laplace(nu, d));
}

TEST_CASE("banana density", "[integrand]") {
  Vector mode(2);
  mode << 0.0, -1.5;
  CHECK(banana_log_density(mode) == Approx(-std::log(2.0 * std::numbers::pi * std::sqrt(3.0))).epsilon(1e-14));

  const double total = testsupport::midpoint_2d(
      [](double a, double b) {
        Vector p(2);
        p << a, b;
        return std::exp(banana_log_density(p));
      },
      0.0, 0.0, 15.0, 0.02);
  CHECK(testsupport::rel_err(total, 1.0) < 1e-3);

  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 3.0);
  for (int i = 0; i < 200; ++i) {
    Vector p(2), q(2);
    p << n(rng), n(rng);
    q << -p[0], p[1];
    CHECK(banana_log_density(p) == banana_log_density(q));
  }
}

TEST_CASE("product t agrees with multivariate t on the axes", "[integrand]") {
  const Vector zero = Vector::Zero(2);
  CHECK(std::abs(product_t_log_density(zero, 38) - mvt_log_density(zero, 38)) < 1e-13);
  for (int i = 0; i < 2; ++i) {
    for (double m : {0.5, 1.0, 2.0, 3.0, -2.5, 7.0}) {
      Vector p = Vector::Zero(2);
      p[i] = m;
      CHECK(std::abs(product_t_log_density(p, 38) - mvt_log_density(p, 38)) < 1e-12);
    }
  }
  Vector off(2);
  off << 1.0, 1.0;
  CHECK(product_t_log_density(off, 38) < mvt_log_density(off, 38));
}

TEST_CASE("product t integral", "[integrand]") {
  CHECK(std::abs(product_t_integral(25921, 72) - 0.952) < 5e-4);
  for (double nu : {1.0, 3.0, 38.0, 1000.0}) CHECK(std::abs(product_t_integral(nu, 1) - 1.0) < 1e-12);
  const double total = testsupport::midpoint_2d(
      [](double a, double b) {
        Vector p(2);
        p << a, b;
        return std::exp(product_t_log_density(p, 38.0));
      },
      0.0, 0.0, 40.0, 0.05);
  CHECK(testsupport::rel_err(product_t_integral(38, 2), total) < 1e-3);
}

TEST_CASE("product t integral dominates the laplace ratio", "[integrand][property]") {
  CHECK(product_t_integral(38, 2) >= mvt_laplace(38, 2));
  CHECK(product_t_integral(25921, 72) >= mvt_laplace(25921, 72));
  for (int d = 1; d <= 20; ++d)
    for (double nu : {5.0, 20.0, 100.0}) CHECK(product_t_integral(nu, d) >= mvt_laplace(nu, d));
}

TEST_CASE("builtin modes are maximizers", "[integrand][property]") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n(0.0, 2.0);
  for (const char* name : {"banana", "mvt:nu=38,d=2", "product_t:nu=38,d=2", "gaussian:d=3", "mvt:nu=5,d=4"}) {
    const IntegrandSpec s = parse_builtin(name);
    for (int i = 0; i < 1000; ++i) {
      Vector x = s.mode();
      for (int j = 0; j < s.dim(); ++j) x[j] += n(rng);
      CHECK(s.log_f(x) <= s.log_f_mode());
    }
  }
}

TEST_CASE("finite-difference hessian matches the supplied one", "[integrand][property]") {
  for (const char* name :
       {"banana", "mvt:nu=38,d=2", "product_t:nu=38,d=2", "gaussian:d=3", "mvt:nu=5,d=4", "product_t:nu=25921,d=72"}) {
    const IntegrandSpec s = parse_builtin(name);
    const GaussianApprox a = gaussian_approx(s);
    IntegrandSpec::BatchFn batch = [&s](const Matrix& pts) { return s.log_f_batch(pts); };
    // One step per standardized unit: hint = diag of -H^{-1}.
    const Vector hint = (a.transform * a.transform.transpose()).diagonal();
    const Matrix fd = finite_difference_hessian(batch, s.mode(), hint);
    INFO(name);
    CHECK((fd - s.hessian()).norm() <= 1e-4 * s.hessian().norm());
  }
}

TEST_CASE("finite-difference hessian rejects non-finite values", "[integrand][errors]") {
  IntegrandSpec::BatchFn batch = [](const Matrix& pts) {
    Vector v(pts.rows());
    for (Eigen::Index i = 0; i < pts.rows(); ++i) v[i] = pts(i, 0) > 0 ? NAN : -pts.row(i).squaredNorm();
    return v;
  };
  CHECK(code_of([&] { finite_difference_hessian(batch, Vector::Zero(2)); }) == ErrorCode::kNonFiniteHessian);
}

TEST_CASE("parallel batch evaluation matches sequential", "[integrand]") {
  const IntegrandSpec s = mvt_integrand(7, 3);
  const Matrix pts = Matrix::Random(1000, 3) * 4.0;
  const Vector a = s.log_f_batch(pts, 1);
  const Vector b = s.log_f_batch(pts, 8);
  CHECK(a == b);
}

TEST_CASE("builtin parsing", "[integrand]") {
  CHECK(parse_builtin("banana").dim() == 2);
  CHECK(parse_builtin("mvt:nu=38,d=2").name() == "mvt:nu=38,d=2");
  CHECK(parse_builtin("product_t:nu=25921,d=72").dim() == 72);
  CHECK(parse_builtin("gaussian:d=10").dim() == 10);
  CHECK_THROWS_AS(parse_builtin("nope"), Error);
  CHECK_THROWS_AS(parse_builtin("mvt:nu=abc,d=2"), Error);
  CHECK_THROWS_AS(parse_builtin("mvt:d=2"), Error);
  CHECK_THROWS_AS(parse_builtin("gaussian:d=0"), Error);
}
