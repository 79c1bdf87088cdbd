#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "inflare/linalg.hpp"

namespace inflare::datasets {

enum class DatasetKind {
  circles,
  moons,
  sine,
  s_curve,
  swirl,
  circles_embedded_plane,
  circles_embedded_curved,
  s_curve_scaled,
  swirl_scaled,
};

std::string_view to_string(DatasetKind kind);
DatasetKind parse_kind(std::string_view name);

struct DatasetSpec {
  DatasetKind kind = DatasetKind::circles;
  std::size_t n = 10000;
  double noise_sd = 0.0;
  std::uint64_t seed = 0;
  // Target sd of the thickness coordinate for the *_scaled variants.
  double thickness_sd = 0.70710678118654752;
};

struct PointCloud {
  std::string name;
  Matrix points;     // N x d
  Matrix embedding;  // 3 x 2 orthonormal map for circles_embedded_plane, else empty

  std::size_t size() const noexcept { return points.rows(); }
  std::size_t dim() const noexcept { return points.cols(); }
};

// Raw toy clouds before standardization. The *_scaled variants are the
// exception: they come back standardized with the thickness axis moved to the
// last coordinate and scaled to `thickness_sd`.
//
//   circles   radius 1 (first ceil(n/2) points) and radius 0.5, uniform angle
//   moons     (cos t, sin t) and (1 - cos t, 0.5 - sin t), t ~ U(0, pi)
//   sine      x ~ U(-pi, pi), y = sin(2x)
//   s_curve   x = sin(th), y = u, z = sign(th)(cos(th) - 1),
//             th ~ U(-3pi/2, 3pi/2), u ~ U(0, 2)
//   swirl     x = th cos(th)/3pi, y ~ U(0, 1), z = th sin(th)/3pi, th ~ U(pi, 4pi)
//   circles_embedded_plane   circles mapped through a seeded orthonormal 3x2 M
//   circles_embedded_curved  (x, y, sign(y) y^2)
//
// Isotropic N(0, noise_sd^2) jitter is added in the output dimension.
PointCloud generate(const DatasetSpec& spec);

struct Standardization {
  PointCloud cloud;
  Vector mean;
  Vector scale;  // per-coordinate population sd
};

Standardization standardize(const PointCloud& pc);
Matrix destandardize(const Matrix& points, const Vector& mean, const Vector& scale);

struct EigenFrame {
  Vector mean;
  Matrix basis;       // W, orthonormal eigenvector columns
  Vector sigma0_sq;   // descending, floored
  std::size_t floored = 0;  // count of eigenvalues raised to the floor

  std::size_t dim() const noexcept { return mean.size(); }
};

inline constexpr double kEigenFloorRatio = 1e-6;

EigenFrame estimate_eigenframe(const PointCloud& pc);

// diag(1/sigma0) Wᵀ (x - mean), row by row.
Matrix whiten(const Matrix& points, const EigenFrame& frame);
Matrix unwhiten(const Matrix& whitened, const EigenFrame& frame);

// CSV with header `x0,...,x{d-1}`, shortest round-trip decimal formatting.
void write_csv(const std::filesystem::path& path, const Matrix& points);
Matrix read_csv(const std::filesystem::path& path);
std::string format_double(double v);

}  // namespace inflare::datasets
