#pragma once

// Shared test fixtures built on the library types.

#include <functional>
#include <string>

#include "lapdiag/error.hpp"
#include "lapdiag/integrand.hpp"

namespace testsupport {

inline lapdiag::ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const lapdiag::Error& e) {
    return e.code();
  }
  return lapdiag::ErrorCode::kInternal;
}

// g(x) = a * f(A x + b), with mode and Hessian pulled back exactly.
inline lapdiag::IntegrandSpec affine_transform(const lapdiag::IntegrandSpec& f, double a, const lapdiag::Matrix& A,
                                               const lapdiag::Vector& b) {
  const double log_a = std::log(a);
  const lapdiag::Vector mode = A.fullPivLu().solve(f.mode() - b);
  const lapdiag::Matrix h = A.transpose() * f.hessian() * A;
  return lapdiag::IntegrandSpec(
      f.name() + "+affine",
      [f, log_a, A, b](const Eigen::Ref<const lapdiag::Vector>& x) {
        const lapdiag::Vector y = A * x + b;
        return log_a + f.log_f(y);
      },
      mode, 0.5 * (h + h.transpose()));
}

}  // namespace testsupport
