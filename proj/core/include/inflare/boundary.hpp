#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "inflare/linalg.hpp"
#include "inflare/pfode.hpp"
#include "inflare/schedule.hpp"

namespace inflare::boundary {

// Closed 2D vertex loop (consecutive rows joined, last to first) or a 3D
// triangle mesh over the vertex rows.
struct BoundarySet {
  std::size_t dim = 2;
  Matrix vertices;
  std::vector<std::array<std::size_t, 3>> triangles;  // 3D only
  double mahal_radius = 0.0;
  Vector reference_cov;
  std::size_t subdivision_level = 0;  // 3D only
};

inline constexpr std::size_t kDefaultBoundaryPoints = 200;
inline constexpr double kOnBoundaryTolerance = 1e-12;

// 2D: n_target angle-ordered vertices r √cov ⊙ (cos θ, sin θ).
// 3D: icosphere at the level whose vertex count is closest to n_target,
// scaled by r √cov per axis.
BoundarySet make_ball_boundary(std::size_t d, double radius, std::span<const double> cov_diag,
                               std::size_t n_target = kDefaultBoundaryPoints);

// Icosphere with 10·4^level + 2 unit-norm vertices and outward-facing triangles.
BoundarySet icosphere(std::size_t level);

// 2D: loop has >= 3 distinct vertices and no two non-adjacent edges touch.
// 3D: every edge is shared by exactly two triangles with opposite orientation.
bool is_valid(const BoundarySet& b, std::string* why = nullptr);

// Even-odd containment; points within kOnBoundaryTolerance of the boundary count as inside.
bool contains(const BoundarySet& b, std::span<const double> p);
double coverage_fraction(const Matrix& points, const BoundarySet& b);

// Same topology, vertices replaced (e.g. after transport).
BoundarySet with_vertices(const BoundarySet& b, Matrix vertices);

struct CoverageReport {
  double radius = 0.0;
  pfode::Direction direction = pfode::Direction::generate;
  double frac_before = 0.0;
  double frac_after = 0.0;
  std::size_t n_test = 0;
  std::size_t boundary_vertices = 0;
  bool topology_ok = true;  // transported boundary still valid

  double change() const noexcept { return frac_after - frac_before; }
};

struct CoverageConfig {
  std::vector<double> radii{0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5};
  std::size_t n_test = 20000;
  std::size_t n_boundary = kDefaultBoundaryPoints;
  pfode::Solver solver = pfode::Solver::heun;
  std::uint64_t seed = 0;
};

// Test points ~ N(0, latent_cov) and ball boundaries in the latent space are
// generated to data space (coverage recomputed), then inflated back. Reports
// one entry per radius and direction.
std::vector<CoverageReport> coverage_experiment(const pfode::ScoreSource& source,
                                               const schedule::InflationSchedule& s,
                                               const pfode::Discretization& disc,
                                               const CoverageConfig& config);

std::string to_json(const std::vector<CoverageReport>& reports);

void write_off(const std::filesystem::path& path, const BoundarySet& b);
void write_boundary_csv(const std::filesystem::path& path, const BoundarySet& b);

}  // namespace inflare::boundary
