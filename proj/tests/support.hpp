#pragma once

// Independent reference computations used only by the tests.

#include <cmath>
#include <functional>
#include <random>

#include <Eigen/Dense>

namespace testsupport {

// Midpoint sum of fn over [c - h, c + h]^2 with cells of width `step`.
inline double midpoint_2d(const std::function<double(double, double)>& fn, double c1, double c2, double h, double step) {
  const int m = static_cast<int>(std::lround(2.0 * h / step));
  const double w = 2.0 * h / m;
  double acc = 0.0;
  for (int i = 0; i < m; ++i) {
    const double x = c1 - h + (i + 0.5) * w;
    double row = 0.0;
    for (int j = 0; j < m; ++j) row += fn(x, c2 - h + (j + 0.5) * w);
    acc += row;
  }
  return acc * w * w;
}

inline double midpoint_1d(const std::function<double(double)>& fn, double c, double h, double step) {
  const int m = static_cast<int>(std::lround(2.0 * h / step));
  const double w = 2.0 * h / m;
  double acc = 0.0;
  for (int i = 0; i < m; ++i) acc += fn(c - h + (i + 0.5) * w);
  return acc * w;
}

// Composite Simpson rule on [a, b] with an even number of panels.
inline double simpson(const std::function<double(double)>& fn, double a, double b, int panels) {
  if (panels % 2) ++panels;
  const double h = (b - a) / panels;
  double acc = fn(a) + fn(b);
  for (int i = 1; i < panels; ++i) acc += fn(a + i * h) * (i % 2 ? 4.0 : 2.0);
  return acc * h / 3.0;
}

inline double rel_err(double got, double want) { return std::abs(got - want) / std::abs(want); }

inline Eigen::MatrixXd random_spd(int d, std::mt19937_64& rng, double lo = 0.2, double hi = 5.0) {
  std::normal_distribution<double> n;
  std::uniform_real_distribution<double> u(lo, hi);
  Eigen::MatrixXd a(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) a(i, j) = n(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ();
  Eigen::VectorXd ev(d);
  for (int i = 0; i < d; ++i) ev[i] = u(rng);
  return q * ev.asDiagonal() * q.transpose();
}

}  // namespace testsupport
