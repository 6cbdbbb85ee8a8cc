#pragma once

#include <charconv>
#include <cmath>
#include <string>

namespace lapdiag::detail {

// Shortest round-trip decimal form.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline constexpr double kLog2Pi = 1.8378770664093454836;

}  // namespace lapdiag::detail
