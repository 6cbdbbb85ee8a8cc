#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "lapdiag/integrand.hpp"

namespace lapdiag {

/// All images of a generator under coordinate permutations and sign flips.
/// The generator lists the nonzero magnitudes in ascending order; an empty
/// generator is the origin.
struct Orbit {
  std::vector<double> generator;
  Matrix points;  // one point per row, lexicographic order

  Eigen::Index size() const { return points.rows(); }
  double radius() const;  // common norm of every point
};

Orbit expand_orbit(std::vector<double> generator, int d);

/// Closed-form orbit size: distinct placements of the magnitudes times
/// 2^(number of nonzero entries).
double orbit_size(const std::vector<double>& generator, int d);

enum class GridFamily { kCross2d, kCkf, kGh2, kCustom };

std::string_view to_string(GridFamily family);
GridFamily parse_grid_family(std::string_view text);

/// Fully symmetric preliminary grid in standardized coordinates.
class PreliminaryGrid {
 public:
  // Empty placeholder with dim() == 0.
  PreliminaryGrid() = default;
  // Orbits are sorted into generator-lexicographic order.
  PreliminaryGrid(int dim, GridFamily family, double scale, std::vector<Orbit> orbits);

  int dim() const { return dim_; }
  GridFamily family() const { return family_; }
  double scale() const { return scale_; }
  const std::vector<Orbit>& orbits() const { return orbits_; }
  Eigen::Index size() const { return points_.rows(); }
  // All points, orbit by orbit.
  const Matrix& points() const { return points_; }
  // First row of each orbit within points().
  const std::vector<Eigen::Index>& offsets() const { return offsets_; }
  const std::vector<std::string>& warnings() const { return warnings_; }

 private:
  int dim_ = 0;
  GridFamily family_ = GridFamily::kCustom;
  double scale_ = 1.0;
  std::vector<Orbit> orbits_;
  Matrix points_;
  std::vector<Eigen::Index> offsets_;
  std::vector<std::string> warnings_;
};

/// {0} together with +-m e_i for m in {1, 2, 3}, in two dimensions.
PreliminaryGrid cross2d_grid();
/// {0} together with +-sqrt(d) e_i.
PreliminaryGrid ckf_grid(int d);
/// Order-2 sparse Gauss-Hermite grid without its origin, scaled by `scale`.
PreliminaryGrid gh2_grid(int d, double scale);
/// Grid from explicit generators; an empty generator adds the origin.
PreliminaryGrid custom_grid(int d, const std::vector<std::vector<double>>& generators, double scale = 1.0);

/// Positive nodes of the n-point Gauss-Hermite rule for the weight
/// exp(-x^2 / 2), ascending.
std::vector<double> hermite_positive_nodes(int n);

/// Interrogation points s_i = T s*_i + mode, one per row, in grid order.
struct InterrogationGrid {
  Matrix points;
};

InterrogationGrid to_interrogation(const PreliminaryGrid& grid, const GaussianApprox& approx);
/// Row-wise T^{-1}(s_i - mode).
Matrix from_interrogation(const InterrogationGrid& grid, const GaussianApprox& approx);

nlohmann::json grid_to_json(const PreliminaryGrid& grid);
PreliminaryGrid grid_from_json(const nlohmann::json& doc);

/// Rebuilds a named family at the given dimension and scale.
PreliminaryGrid make_grid(GridFamily family, int dim, double scale);

}  // namespace lapdiag
