#include "lapdiag/grids.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "lapdiag/error.hpp"

namespace lapdiag {

namespace {

bool row_less(const Matrix& m, Eigen::Index a, Eigen::Index b) {
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    if (m(a, j) < m(b, j)) return true;
    if (m(b, j) < m(a, j)) return false;
  }
  return false;
}

}  // namespace

double Orbit::radius() const {
  double s = 0.0;
  for (double g : generator) s += g * g;
  return std::sqrt(s);
}

Orbit expand_orbit(std::vector<double> generator, int d) {
  if (d < 1) fail(ErrorCode::kInvalidArgument, "dimension must be positive");
  if (generator.size() > static_cast<std::size_t>(d))
    fail(ErrorCode::kInvalidArgument, "orbit generator is longer than the dimension");
  for (double g : generator)
    if (!(g > 0.0) || !std::isfinite(g)) fail(ErrorCode::kInvalidArgument, "orbit magnitudes must be positive");
  std::sort(generator.begin(), generator.end());

  // Distinct placements are the distinct permutations of the zero-padded
  // generator; next_permutation visits each multiset arrangement once.
  std::vector<double> slots(static_cast<std::size_t>(d), 0.0);
  std::copy(generator.begin(), generator.end(), slots.end() - static_cast<std::ptrdiff_t>(generator.size()));
  std::vector<std::vector<double>> placements;
  do {
    placements.push_back(slots);
  } while (std::next_permutation(slots.begin(), slots.end()));

  const std::size_t k = generator.size();
  const std::size_t signs = std::size_t{1} << k;
  Matrix pts(static_cast<Eigen::Index>(placements.size() * signs), d);
  Eigen::Index row = 0;
  for (const auto& p : placements) {
    for (std::size_t mask = 0; mask < signs; ++mask) {
      std::size_t bit = 0;
      for (int j = 0; j < d; ++j) {
        double v = p[static_cast<std::size_t>(j)];
        if (v != 0.0) {
          if (mask & (std::size_t{1} << bit)) v = -v;
          ++bit;
        }
        pts(row, j) = v;
      }
      ++row;
    }
  }

  std::vector<Eigen::Index> order(static_cast<std::size_t>(pts.rows()));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<Eigen::Index>(i);
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return row_less(pts, a, b); });

  Orbit orbit;
  orbit.generator = std::move(generator);
  orbit.points.resize(pts.rows(), d);
  for (std::size_t i = 0; i < order.size(); ++i) orbit.points.row(static_cast<Eigen::Index>(i)) = pts.row(order[i]);
  return orbit;
}

double orbit_size(const std::vector<double>& generator, int d) {
  std::vector<double> g = generator;
  std::sort(g.begin(), g.end());
  // Multinomial d! / ((d - k)! * prod m_j!) over runs of equal magnitudes.
  double count = 1.0;
  const auto k = static_cast<int>(g.size());
  for (int i = 0; i < k; ++i) count *= static_cast<double>(d - i);
  std::size_t i = 0;
  while (i < g.size()) {
    std::size_t j = i;
    while (j < g.size() && g[j] == g[i]) ++j;
    for (std::size_t r = 2; r <= j - i; ++r) count /= static_cast<double>(r);
    i = j;
  }
  return count * std::ldexp(1.0, k);
}

std::string_view to_string(GridFamily family) {
  switch (family) {
    case GridFamily::kCross2d: return "cross2d";
    case GridFamily::kCkf: return "ckf";
    case GridFamily::kGh2: return "gh2";
    case GridFamily::kCustom: return "custom";
  }
  return "custom";
}

GridFamily parse_grid_family(std::string_view text) {
  if (text == "cross2d") return GridFamily::kCross2d;
  if (text == "ckf") return GridFamily::kCkf;
  if (text == "gh2") return GridFamily::kGh2;
  if (text == "custom") return GridFamily::kCustom;
  fail(ErrorCode::kInvalidArgument, "unknown grid family '" + std::string(text) + "'");
}

PreliminaryGrid::PreliminaryGrid(int dim, GridFamily family, double scale, std::vector<Orbit> orbits)
    : dim_(dim), family_(family), scale_(scale), orbits_(std::move(orbits)) {
  if (dim_ < 1) fail(ErrorCode::kInvalidArgument, "grid dimension must be positive");
  if (orbits_.empty()) fail(ErrorCode::kInvalidArgument, "grid has no orbits");
  std::sort(orbits_.begin(), orbits_.end(),
            [](const Orbit& a, const Orbit& b) { return a.generator < b.generator; });
  bool has_axis = false;
  Eigen::Index n = 0;
  for (std::size_t i = 0; i < orbits_.size(); ++i) {
    const Orbit& o = orbits_[i];
    if (o.points.cols() != dim_) fail(ErrorCode::kDimensionMismatch, "orbit dimension differs from grid dimension");
    if (i > 0 && o.generator == orbits_[i - 1].generator)
      fail(ErrorCode::kInvalidArgument, "grid contains the same orbit twice");
    if (o.generator.size() == 1) has_axis = true;
    n += o.size();
  }
  if (!has_axis) fail(ErrorCode::kInvalidArgument, "grid needs at least one orbit on the axes");

  points_.resize(n, dim_);
  offsets_.reserve(orbits_.size());
  Eigen::Index row = 0;
  for (const Orbit& o : orbits_) {
    offsets_.push_back(row);
    points_.middleRows(row, o.size()) = o.points;
    row += o.size();
  }

  std::set<double> axis_magnitudes;
  for (const Orbit& o : orbits_)
    if (o.generator.size() == 1) axis_magnitudes.insert(o.generator[0]);
  if (dim_ > 2 && axis_magnitudes.size() > 1)
    warnings_.push_back("several magnitudes per axis in more than two dimensions; such cross grids performed poorly");
}

namespace {

Orbit origin_orbit(int d) {
  Orbit o;
  o.points = Matrix::Zero(1, d);
  return o;
}

}  // namespace

PreliminaryGrid cross2d_grid() {
  std::vector<Orbit> orbits{origin_orbit(2)};
  for (double m : {1.0, 2.0, 3.0}) orbits.push_back(expand_orbit({m}, 2));
  return PreliminaryGrid(2, GridFamily::kCross2d, 1.0, std::move(orbits));
}

PreliminaryGrid ckf_grid(int d) {
  if (d < 1) fail(ErrorCode::kInvalidArgument, "ckf grid needs d >= 1");
  std::vector<Orbit> orbits{origin_orbit(d), expand_orbit({std::sqrt(static_cast<double>(d))}, d)};
  return PreliminaryGrid(d, GridFamily::kCkf, 1.0, std::move(orbits));
}

std::vector<double> hermite_positive_nodes(int n) {
  if (n < 1) fail(ErrorCode::kInvalidArgument, "Hermite rule needs at least one node");
  // Golub-Welsch: nodes are the eigenvalues of the Jacobi matrix of the
  // probabilists' Hermite recurrence.
  Matrix jac = Matrix::Zero(n, n);
  for (int k = 1; k < n; ++k) jac(k - 1, k) = jac(k, k - 1) = std::sqrt(static_cast<double>(k));
  Eigen::SelfAdjointEigenSolver<Matrix> es(jac, Eigen::EigenvaluesOnly);
  std::vector<double> out;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
    const double x = es.eigenvalues()(i);
    if (x > 1e-12) out.push_back(x);
  }
  std::sort(out.begin(), out.end());
  return out;
}

PreliminaryGrid gh2_grid(int d, double scale) {
  if (d < 2) fail(ErrorCode::kInvalidArgument, "gh2 grid needs d >= 2");
  if (!(scale > 0.0) || !std::isfinite(scale)) fail(ErrorCode::kInvalidArgument, "grid scale must be positive");
  const double a = hermite_positive_nodes(2).front() * scale;
  const double b = hermite_positive_nodes(3).front() * scale;
  std::vector<Orbit> orbits{expand_orbit({a}, d), expand_orbit({b}, d), expand_orbit({a, a}, d)};
  return PreliminaryGrid(d, GridFamily::kGh2, scale, std::move(orbits));
}

PreliminaryGrid custom_grid(int d, const std::vector<std::vector<double>>& generators, double scale) {
  if (!(scale > 0.0) || !std::isfinite(scale)) fail(ErrorCode::kInvalidArgument, "grid scale must be positive");
  std::vector<Orbit> orbits;
  for (const auto& g : generators) {
    if (g.empty()) {
      orbits.push_back(origin_orbit(d));
      continue;
    }
    if (g.size() > 2) fail(ErrorCode::kInvalidArgument, "orbit generators longer than 2 are not supported");
    std::vector<double> scaled = g;
    for (double& v : scaled) v *= scale;
    orbits.push_back(expand_orbit(std::move(scaled), d));
  }
  return PreliminaryGrid(d, GridFamily::kCustom, scale, std::move(orbits));
}

PreliminaryGrid make_grid(GridFamily family, int dim, double scale) {
  switch (family) {
    case GridFamily::kCross2d:
      if (dim != 2) fail(ErrorCode::kInvalidArgument, "cross2d grid is two-dimensional");
      return cross2d_grid();
    case GridFamily::kCkf: return ckf_grid(dim);
    case GridFamily::kGh2: return gh2_grid(dim, scale);
    case GridFamily::kCustom: break;
  }
  fail(ErrorCode::kInvalidArgument, "custom grids need explicit generators");
}

InterrogationGrid to_interrogation(const PreliminaryGrid& grid, const GaussianApprox& approx) {
  if (grid.dim() != approx.dim())
    fail(ErrorCode::kDimensionMismatch, "grid dimension " + std::to_string(grid.dim()) +
                                            " differs from integrand dimension " + std::to_string(approx.dim()));
  InterrogationGrid out;
  out.points = grid.points() * approx.transform.transpose();
  out.points.rowwise() += approx.mode.transpose();
  return out;
}

Matrix from_interrogation(const InterrogationGrid& grid, const GaussianApprox& approx) {
  if (grid.points.cols() != approx.dim()) fail(ErrorCode::kDimensionMismatch, "interrogation grid dimension mismatch");
  Matrix centered = grid.points.rowwise() - approx.mode.transpose();
  // T^{-1} = D^{-1/2} V^T.
  Matrix tinv = approx.eigvals.cwiseSqrt().cwiseInverse().asDiagonal() * approx.eigvecs.transpose();
  return centered * tinv.transpose();
}

nlohmann::json grid_to_json(const PreliminaryGrid& grid) {
  nlohmann::json orbits = nlohmann::json::array();
  for (const Orbit& o : grid.orbits()) orbits.push_back({{"generator", o.generator}, {"size", o.size()}});
  return {{"dim", grid.dim()}, {"family", to_string(grid.family())}, {"scale", grid.scale()}, {"orbits", orbits}};
}

PreliminaryGrid grid_from_json(const nlohmann::json& doc) {
  try {
    const int dim = doc.at("dim").get<int>();
    const GridFamily family = parse_grid_family(doc.at("family").get<std::string>());
    const double scale = doc.value("scale", 1.0);
    std::vector<std::vector<double>> generators;
    std::vector<long long> sizes;
    if (doc.contains("orbits")) {
      for (const auto& o : doc.at("orbits")) {
        generators.push_back(o.at("generator").get<std::vector<double>>());
        sizes.push_back(o.value("size", -1LL));
      }
    }
    PreliminaryGrid grid = [&] {
      if (family != GridFamily::kCustom) return make_grid(family, dim, scale);
      // Stored generators already include the scale.
      std::vector<Orbit> orbits;
      for (const auto& g : generators) orbits.push_back(g.empty() ? origin_orbit(dim) : expand_orbit(g, dim));
      return PreliminaryGrid(dim, family, scale, std::move(orbits));
    }();
    if (!generators.empty()) {
      if (generators.size() != grid.orbits().size())
        fail(ErrorCode::kInvalidArgument, "grid document orbit count does not match the regenerated grid");
      for (std::size_t i = 0; i < sizes.size(); ++i)
        if (sizes[i] >= 0 && sizes[i] != grid.orbits()[i].size())
          fail(ErrorCode::kInvalidArgument, "grid document orbit size does not match the regenerated grid");
    }
    return grid;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kInvalidArgument, std::string("malformed grid document: ") + e.what());
  }
}

}  // namespace lapdiag
