#include "inflare/datasets.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "inflare/error.hpp"
#include "inflare/rng.hpp"

namespace inflare::datasets {

namespace {

constexpr double kPi = std::numbers::pi;

struct KindName {
  DatasetKind kind;
  std::string_view name;
};

constexpr std::array<KindName, 9> kKindNames{{
    {DatasetKind::circles, "circles"},
    {DatasetKind::moons, "moons"},
    {DatasetKind::sine, "sine"},
    {DatasetKind::s_curve, "s_curve"},
    {DatasetKind::swirl, "swirl"},
    {DatasetKind::circles_embedded_plane, "circles_embedded_plane"},
    {DatasetKind::circles_embedded_curved, "circles_embedded_curved"},
    {DatasetKind::s_curve_scaled, "s_curve_scaled"},
    {DatasetKind::swirl_scaled, "swirl_scaled"},
}};

Matrix circles_2d(std::size_t n, RngStream& rng) {
  Matrix pts(n, 2);
  const std::size_t n_outer = (n + 1) / 2;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = i < n_outer ? 1.0 : 0.5;
    const double th = rng.uniform(0.0, 2.0 * kPi);
    pts(i, 0) = r * std::cos(th);
    pts(i, 1) = r * std::sin(th);
  }
  return pts;
}

Matrix moons(std::size_t n, RngStream& rng) {
  Matrix pts(n, 2);
  const std::size_t n_outer = (n + 1) / 2;
  for (std::size_t i = 0; i < n; ++i) {
    const double th = rng.uniform(0.0, kPi);
    if (i < n_outer) {
      pts(i, 0) = std::cos(th);
      pts(i, 1) = std::sin(th);
    } else {
      pts(i, 0) = 1.0 - std::cos(th);
      pts(i, 1) = 0.5 - std::sin(th);
    }
  }
  return pts;
}

Matrix sine(std::size_t n, RngStream& rng) {
  Matrix pts(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = rng.uniform(-kPi, kPi);
    pts(i, 0) = x;
    pts(i, 1) = std::sin(2.0 * x);
  }
  return pts;
}

Matrix s_curve(std::size_t n, RngStream& rng) {
  Matrix pts(n, 3);
  for (std::size_t i = 0; i < n; ++i) {
    const double th = rng.uniform(-1.5 * kPi, 1.5 * kPi);
    const double u = rng.uniform(0.0, 2.0);
    pts(i, 0) = std::sin(th);
    pts(i, 1) = u;
    pts(i, 2) = (th >= 0.0 ? 1.0 : -1.0) * (std::cos(th) - 1.0);
  }
  return pts;
}

Matrix swirl(std::size_t n, RngStream& rng) {
  Matrix pts(n, 3);
  for (std::size_t i = 0; i < n; ++i) {
    const double th = rng.uniform(kPi, 4.0 * kPi);
    pts(i, 0) = th * std::cos(th) / (3.0 * kPi);
    pts(i, 1) = rng.uniform(0.0, 1.0);
    pts(i, 2) = th * std::sin(th) / (3.0 * kPi);
  }
  return pts;
}

// Gram-Schmidt QR of a seeded Gaussian 3x2 matrix; columns orthonormal.
Matrix embedding_matrix(RngStream rng) {
  Matrix m(3, 2);
  rng.fill_normal(m.data());
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t p = 0; p < c; ++p) {
      double proj = 0.0;
      for (std::size_t r = 0; r < 3; ++r) proj += m(r, c) * m(r, p);
      for (std::size_t r = 0; r < 3; ++r) m(r, c) -= proj * m(r, p);
    }
    double norm = 0.0;
    for (std::size_t r = 0; r < 3; ++r) norm += m(r, c) * m(r, c);
    norm = std::sqrt(norm);
    for (std::size_t r = 0; r < 3; ++r) m(r, c) /= norm;
  }
  return m;
}

void add_jitter(Matrix& pts, double sd, RngStream& rng) {
  if (sd == 0.0) return;
  for (double& v : pts.data()) v += sd * rng.normal();
}

// Standardize, move the thickness axis (index 1) to the end, scale it.
Matrix thickness_scaled(const Matrix& raw, double thickness_sd) {
  PointCloud tmp{"", raw, {}};
  const Matrix std_pts = standardize(tmp).cloud.points;
  Matrix out(raw.rows(), 3);
  for (std::size_t i = 0; i < raw.rows(); ++i) {
    out(i, 0) = std_pts(i, 0);
    out(i, 1) = std_pts(i, 2);
    out(i, 2) = thickness_sd * std_pts(i, 1);
  }
  return out;
}

}  // namespace

std::string_view to_string(DatasetKind kind) {
  for (const auto& kn : kKindNames)
    if (kn.kind == kind) return kn.name;
  throw InvalidArgument("unknown dataset kind");
}

DatasetKind parse_kind(std::string_view name) {
  for (const auto& kn : kKindNames)
    if (kn.name == name) return kn.kind;
  throw InvalidArgument("unknown dataset kind '" + std::string(name) + "'");
}

PointCloud generate(const DatasetSpec& spec) {
  detail::require(spec.n >= 1, "generate: n must be >= 1");
  detail::require(std::isfinite(spec.noise_sd) && spec.noise_sd >= 0.0,
                  "generate: noise_sd must be finite and >= 0");
  detail::require(spec.thickness_sd > 0.0, "generate: thickness_sd must be > 0");

  RngStream shape_rng = RngStream(spec.seed).substream(0);
  RngStream noise_rng = RngStream(spec.seed).substream(1);
  PointCloud pc;
  pc.name = std::string(to_string(spec.kind));

  switch (spec.kind) {
    case DatasetKind::circles:
      pc.points = circles_2d(spec.n, shape_rng);
      break;
    case DatasetKind::moons:
      pc.points = moons(spec.n, shape_rng);
      break;
    case DatasetKind::sine:
      pc.points = sine(spec.n, shape_rng);
      break;
    case DatasetKind::s_curve:
    case DatasetKind::s_curve_scaled:
      pc.points = s_curve(spec.n, shape_rng);
      break;
    case DatasetKind::swirl:
    case DatasetKind::swirl_scaled:
      pc.points = swirl(spec.n, shape_rng);
      break;
    case DatasetKind::circles_embedded_plane: {
      const Matrix flat = circles_2d(spec.n, shape_rng);
      pc.embedding = embedding_matrix(RngStream(spec.seed).substream(2));
      pc.points = matmul(flat, pc.embedding.transpose());
      break;
    }
    case DatasetKind::circles_embedded_curved: {
      const Matrix flat = circles_2d(spec.n, shape_rng);
      pc.points = Matrix(spec.n, 3);
      for (std::size_t i = 0; i < spec.n; ++i) {
        const double x = flat(i, 0);
        const double y = flat(i, 1);
        pc.points(i, 0) = x;
        pc.points(i, 1) = y;
        pc.points(i, 2) = (y >= 0.0 ? 1.0 : -1.0) * y * y;
      }
      break;
    }
  }
  add_jitter(pc.points, spec.noise_sd, noise_rng);

  if (spec.kind == DatasetKind::s_curve_scaled || spec.kind == DatasetKind::swirl_scaled) {
    detail::require(spec.n >= 2, "generate: scaled variants need n >= 2");
    pc.points = thickness_scaled(pc.points, spec.thickness_sd);
  }
  return pc;
}

Standardization standardize(const PointCloud& pc) {
  const std::size_t n = pc.size();
  const std::size_t d = pc.dim();
  detail::require(n >= 1 && d >= 1, "standardize: empty cloud");
  Vector mean = column_means(pc.points);
  Vector scale(d, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) {
      const double dev = pc.points(r, c) - mean[c];
      scale[c] += dev * dev;
    }
  for (std::size_t c = 0; c < d; ++c) {
    scale[c] = std::sqrt(scale[c] / static_cast<double>(n));
    if (!(scale[c] > 1e-14 * std::max(1.0, std::abs(mean[c]))))
      throw InvalidArgument("standardize: coordinate " + std::to_string(c) + " is constant");
  }
  Standardization out{pc, mean, scale};
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c)
      out.cloud.points(r, c) = (pc.points(r, c) - mean[c]) / scale[c];
  return out;
}

Matrix destandardize(const Matrix& points, const Vector& mean, const Vector& scale) {
  detail::require(points.cols() == mean.size() && mean.size() == scale.size(),
                  "destandardize: dimension mismatch");
  Matrix out = points;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) = out(r, c) * scale[c] + mean[c];
  return out;
}

EigenFrame estimate_eigenframe(const PointCloud& pc) {
  detail::require(pc.size() > pc.dim(), "estimate_eigenframe: need more points than dimensions");
  const Matrix cov = sample_covariance(pc.points);
  SymEig eig = sym_eig(cov);
  EigenFrame frame{column_means(pc.points), std::move(eig.vectors), std::move(eig.values), 0};
  const double top = frame.sigma0_sq.front();
  if (!(top > 0.0)) throw NumericalError("estimate_eigenframe: covariance has no positive eigenvalue");
  const double floor = kEigenFloorRatio * top;
  for (double& v : frame.sigma0_sq)
    if (v < floor) {
      v = floor;
      ++frame.floored;
    }
  return frame;
}

Matrix whiten(const Matrix& points, const EigenFrame& frame) {
  const std::size_t d = frame.dim();
  detail::require(points.cols() == d, "whiten: dimension mismatch with frame");
  Matrix out(points.rows(), d);
  Vector centered(d);
  for (std::size_t r = 0; r < points.rows(); ++r) {
    for (std::size_t c = 0; c < d; ++c) centered[c] = points(r, c) - frame.mean[c];
    for (std::size_t k = 0; k < d; ++k) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) s += frame.basis(c, k) * centered[c];
      out(r, k) = s / std::sqrt(frame.sigma0_sq[k]);
    }
  }
  return out;
}

Matrix unwhiten(const Matrix& whitened, const EigenFrame& frame) {
  const std::size_t d = frame.dim();
  detail::require(whitened.cols() == d, "unwhiten: dimension mismatch with frame");
  Matrix out(whitened.rows(), d);
  Vector scaled(d);
  for (std::size_t r = 0; r < whitened.rows(); ++r) {
    for (std::size_t k = 0; k < d; ++k) scaled[k] = whitened(r, k) * std::sqrt(frame.sigma0_sq[k]);
    for (std::size_t c = 0; c < d; ++c) {
      double s = frame.mean[c];
      for (std::size_t k = 0; k < d; ++k) s += frame.basis(c, k) * scaled[k];
      out(r, c) = s;
    }
  }
  return out;
}

std::string format_double(double v) {
  std::array<char, 32> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

void write_csv(const std::filesystem::path& path, const Matrix& points) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_csv: cannot open " + path.string());
  for (std::size_t c = 0; c < points.cols(); ++c) out << (c ? "," : "") << 'x' << c;
  out << '\n';
  for (std::size_t r = 0; r < points.rows(); ++r) {
    for (std::size_t c = 0; c < points.cols(); ++c)
      out << (c ? "," : "") << format_double(points(r, c));
    out << '\n';
  }
  if (!out) throw std::runtime_error("write_csv: write failed for " + path.string());
}

Matrix read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_csv: cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError("read_csv: missing header in " + path.string());
  std::size_t d = 0;
  {
    std::stringstream header(line);
    std::string cell;
    while (std::getline(header, cell, ',')) {
      if (!cell.empty() && cell.back() == '\r') cell.pop_back();
      if (cell != "x" + std::to_string(d))
        throw FormatError("read_csv: unexpected header column '" + cell + "'");
      ++d;
    }
  }
  if (d == 0) throw FormatError("read_csv: empty header");
  std::vector<double> values;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const char* p = line.data();
    const char* end = line.data() + line.size();
    for (std::size_t c = 0; c < d; ++c) {
      double v = 0.0;
      const auto res = std::from_chars(p, end, v);
      if (res.ec != std::errc{})
        throw FormatError("read_csv: bad number on data row " + std::to_string(rows + 1));
      values.push_back(v);
      p = res.ptr;
      if (c + 1 < d) {
        if (p == end || *p != ',')
          throw FormatError("read_csv: too few columns on data row " + std::to_string(rows + 1));
        ++p;
      }
    }
    if (p != end) throw FormatError("read_csv: too many columns on data row " + std::to_string(rows + 1));
    ++rows;
  }
  return Matrix(rows, d, std::move(values));
}

}  // namespace inflare::datasets
