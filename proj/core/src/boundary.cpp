#include "inflare/boundary.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <map>
#include <numbers>
#include <utility>

#include "inflare/datasets.hpp"
#include "inflare/error.hpp"
#include "inflare/parallel.hpp"
#include "inflare/rng.hpp"

namespace inflare::boundary {

namespace {

using Vec3 = std::array<double, 3>;

Vec3 sub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
double dot3(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

Vec3 vertex3(const Matrix& v, std::size_t i) { return {v(i, 0), v(i, 1), v(i, 2)}; }

double segment_distance_sq(double px, double py, double ax, double ay, double bx, double by) {
  const double dx = bx - ax;
  const double dy = by - ay;
  const double len_sq = dx * dx + dy * dy;
  double u = len_sq > 0.0 ? ((px - ax) * dx + (py - ay) * dy) / len_sq : 0.0;
  u = std::clamp(u, 0.0, 1.0);
  const double ex = ax + u * dx - px;
  const double ey = ay + u * dy - py;
  return ex * ex + ey * ey;
}

double orient(double ax, double ay, double bx, double by, double cx, double cy) {
  return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax);
}

bool on_segment(double ax, double ay, double bx, double by, double px, double py) {
  return std::min(ax, bx) <= px && px <= std::max(ax, bx) && std::min(ay, by) <= py &&
         py <= std::max(ay, by);
}

bool segments_touch(double ax, double ay, double bx, double by, double cx, double cy, double dx,
                    double dy) {
  const double o1 = orient(ax, ay, bx, by, cx, cy);
  const double o2 = orient(ax, ay, bx, by, dx, dy);
  const double o3 = orient(cx, cy, dx, dy, ax, ay);
  const double o4 = orient(cx, cy, dx, dy, bx, by);
  if (((o1 > 0 && o2 < 0) || (o1 < 0 && o2 > 0)) && ((o3 > 0 && o4 < 0) || (o3 < 0 && o4 > 0)))
    return true;
  return (o1 == 0 && on_segment(ax, ay, bx, by, cx, cy)) ||
         (o2 == 0 && on_segment(ax, ay, bx, by, dx, dy)) ||
         (o3 == 0 && on_segment(cx, cy, dx, dy, ax, ay)) ||
         (o4 == 0 && on_segment(cx, cy, dx, dy, bx, by));
}

// Squared distance from p to triangle abc (closest-point regions).
double triangle_distance_sq(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 ab = sub(b, a);
  const Vec3 ac = sub(c, a);
  const Vec3 ap = sub(p, a);
  const double d1 = dot3(ab, ap);
  const double d2 = dot3(ac, ap);
  auto dist_sq = [&](const Vec3& q) {
    const Vec3 e = sub(p, q);
    return dot3(e, e);
  };
  if (d1 <= 0.0 && d2 <= 0.0) return dist_sq(a);
  const Vec3 bp = sub(p, b);
  const double d3 = dot3(ab, bp);
  const double d4 = dot3(ac, bp);
  if (d3 >= 0.0 && d4 <= d3) return dist_sq(b);
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {
    const double v = d1 / (d1 - d3);
    return dist_sq({a[0] + v * ab[0], a[1] + v * ab[1], a[2] + v * ab[2]});
  }
  const Vec3 cp = sub(p, c);
  const double d5 = dot3(ab, cp);
  const double d6 = dot3(ac, cp);
  if (d6 >= 0.0 && d5 <= d6) return dist_sq(c);
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {
    const double w = d2 / (d2 - d6);
    return dist_sq({a[0] + w * ac[0], a[1] + w * ac[1], a[2] + w * ac[2]});
  }
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
    const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    return dist_sq({b[0] + w * (c[0] - b[0]), b[1] + w * (c[1] - b[1]), b[2] + w * (c[2] - b[2])});
  }
  const double denom = 1.0 / (va + vb + vc);
  const double v = vb * denom;
  const double w = vc * denom;
  return dist_sq({a[0] + ab[0] * v + ac[0] * w, a[1] + ab[1] * v + ac[1] * w,
                  a[2] + ab[2] * v + ac[2] * w});
}

// Möller–Trumbore; counts hits with ray parameter > 0.
bool ray_hits(const Vec3& origin, const Vec3& dir, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 e1 = sub(b, a);
  const Vec3 e2 = sub(c, a);
  const Vec3 h = cross(dir, e2);
  const double det = dot3(e1, h);
  if (det == 0.0) return false;
  const double inv = 1.0 / det;
  const Vec3 s = sub(origin, a);
  const double u = inv * dot3(s, h);
  if (u < 0.0 || u > 1.0) return false;
  const Vec3 q = cross(s, e1);
  const double v = inv * dot3(dir, q);
  if (v < 0.0 || u + v > 1.0) return false;
  return inv * dot3(e2, q) > 0.0;
}

bool contains_2d(const Matrix& v, double px, double py) {
  const std::size_t n = v.rows();
  const double tol_sq = kOnBoundaryTolerance * kOnBoundaryTolerance;
  bool inside = false;
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const double xi = v(i, 0), yi = v(i, 1), xj = v(j, 0), yj = v(j, 1);
    if (segment_distance_sq(px, py, xj, yj, xi, yi) <= tol_sq) return true;
    if ((yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi) inside = !inside;
  }
  return inside;
}

bool contains_3d(const BoundarySet& b, const Vec3& p) {
  const double tol_sq = kOnBoundaryTolerance * kOnBoundaryTolerance;
  // Irrational-looking direction to avoid grazing edges and vertices of regular meshes.
  static const Vec3 dir = [] {
    Vec3 d{0.6136387, 0.5280915, 0.5870213};
    const double n = std::sqrt(dot3(d, d));
    return Vec3{d[0] / n, d[1] / n, d[2] / n};
  }();
  std::size_t hits = 0;
  for (const auto& tri : b.triangles) {
    const Vec3 a = vertex3(b.vertices, tri[0]);
    const Vec3 c1 = vertex3(b.vertices, tri[1]);
    const Vec3 c2 = vertex3(b.vertices, tri[2]);
    if (triangle_distance_sq(p, a, c1, c2) <= tol_sq) return true;
    if (ray_hits(p, dir, a, c1, c2)) ++hits;
  }
  return hits % 2 == 1;
}

std::size_t closest_level(std::size_t n_target) {
  std::size_t best = 0;
  std::size_t best_gap = static_cast<std::size_t>(-1);
  for (std::size_t level = 0; level <= 6; ++level) {
    const std::size_t v = 10 * (std::size_t{1} << (2 * level)) + 2;
    const std::size_t gap = v > n_target ? v - n_target : n_target - v;
    if (gap < best_gap) {
      best_gap = gap;
      best = level;
    }
  }
  return best;
}

Matrix stack(const std::vector<const Matrix*>& parts, std::size_t cols) {
  std::size_t rows = 0;
  for (const Matrix* m : parts) rows += m->rows();
  Matrix out(rows, cols);
  std::size_t r = 0;
  for (const Matrix* m : parts) {
    std::copy(m->data().begin(), m->data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(r * cols));
    r += m->rows();
  }
  return out;
}

Matrix rows_of(const Matrix& m, std::size_t begin, std::size_t count) {
  Matrix out(count, m.cols());
  std::copy_n(m.data().begin() + static_cast<std::ptrdiff_t>(begin * m.cols()), count * m.cols(),
              out.data().begin());
  return out;
}

}  // namespace

BoundarySet icosphere(std::size_t level) {
  detail::require(level <= 6, "icosphere: subdivision level above 6 is not supported");
  const double t = std::numbers::phi;
  std::vector<Vec3> verts = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0},
                             {0, -1, t}, {0, 1, t}, {0, -1, -t}, {0, 1, -t},
                             {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  for (auto& v : verts) {
    const double n = std::sqrt(dot3(v, v));
    v = {v[0] / n, v[1] / n, v[2] / n};
  }
  std::vector<std::array<std::size_t, 3>> faces = {
      {0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
      {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
      {3, 8, 9},  {4, 9, 5},  {2, 4, 11},  {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  for (std::size_t l = 0; l < level; ++l) {
    std::map<std::pair<std::size_t, std::size_t>, std::size_t> midpoints;
    auto midpoint = [&](std::size_t a, std::size_t b) {
      const auto key = std::minmax(a, b);
      if (auto it = midpoints.find(key); it != midpoints.end()) return it->second;
      Vec3 m{(verts[a][0] + verts[b][0]) / 2, (verts[a][1] + verts[b][1]) / 2,
             (verts[a][2] + verts[b][2]) / 2};
      const double n = std::sqrt(dot3(m, m));
      verts.push_back({m[0] / n, m[1] / n, m[2] / n});
      midpoints.emplace(key, verts.size() - 1);
      return verts.size() - 1;
    };
    std::vector<std::array<std::size_t, 3>> next;
    next.reserve(faces.size() * 4);
    for (const auto& f : faces) {
      const std::size_t a = midpoint(f[0], f[1]);
      const std::size_t b = midpoint(f[1], f[2]);
      const std::size_t c = midpoint(f[2], f[0]);
      next.push_back({f[0], a, c});
      next.push_back({f[1], b, a});
      next.push_back({f[2], c, b});
      next.push_back({a, b, c});
    }
    faces = std::move(next);
  }
  BoundarySet out;
  out.dim = 3;
  out.vertices = Matrix(verts.size(), 3);
  for (std::size_t i = 0; i < verts.size(); ++i)
    for (std::size_t k = 0; k < 3; ++k) out.vertices(i, k) = verts[i][k];
  out.triangles = std::move(faces);
  out.subdivision_level = level;
  out.mahal_radius = 1.0;
  out.reference_cov = Vector(3, 1.0);
  return out;
}

BoundarySet make_ball_boundary(std::size_t d, double radius, std::span<const double> cov_diag,
                               std::size_t n_target) {
  detail::require(d == 2 || d == 3, "make_ball_boundary: d must be 2 or 3");
  detail::require(std::isfinite(radius) && radius > 0.0, "make_ball_boundary: radius must be positive");
  detail::require(cov_diag.size() == d, "make_ball_boundary: covariance diagonal has wrong length");
  for (double c : cov_diag)
    detail::require(std::isfinite(c) && c > 0.0, "make_ball_boundary: covariance must be positive");
  BoundarySet b;
  if (d == 2) {
    detail::require(n_target >= 3, "make_ball_boundary: a 2D loop needs at least 3 vertices");
    b.dim = 2;
    b.vertices = Matrix(n_target, 2);
    for (std::size_t i = 0; i < n_target; ++i) {
      const double th = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n_target);
      b.vertices(i, 0) = radius * std::sqrt(cov_diag[0]) * std::cos(th);
      b.vertices(i, 1) = radius * std::sqrt(cov_diag[1]) * std::sin(th);
    }
  } else {
    b = icosphere(closest_level(n_target));
    for (std::size_t i = 0; i < b.vertices.rows(); ++i)
      for (std::size_t k = 0; k < 3; ++k) b.vertices(i, k) *= radius * std::sqrt(cov_diag[k]);
  }
  b.mahal_radius = radius;
  b.reference_cov.assign(cov_diag.begin(), cov_diag.end());
  return b;
}

bool is_valid(const BoundarySet& b, std::string* why) {
  auto fail = [&](const std::string& msg) {
    if (why) *why = msg;
    return false;
  };
  if (!b.vertices.all_finite()) return fail("non-finite vertex");
  if (b.dim == 2) {
    const Matrix& v = b.vertices;
    const std::size_t n = v.rows();
    if (v.cols() != 2) return fail("2D boundary must have 2 columns");
    if (n < 3) return fail("loop needs at least 3 vertices");
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t i2 = (i + 1) % n;
      if (v(i, 0) == v(i2, 0) && v(i, 1) == v(i2, 1)) return fail("zero-length edge at " + std::to_string(i));
      for (std::size_t j = i + 1; j < n; ++j) {
        const std::size_t j2 = (j + 1) % n;
        if (j == i2 || j2 == i) continue;  // adjacent edges share a vertex
        if (segments_touch(v(i, 0), v(i, 1), v(i2, 0), v(i2, 1), v(j, 0), v(j, 1), v(j2, 0), v(j2, 1)))
          return fail("edges " + std::to_string(i) + " and " + std::to_string(j) + " intersect");
      }
    }
    return true;
  }
  if (b.dim != 3 || b.vertices.cols() != 3) return fail("boundary dimension must be 2 or 3");
  if (b.triangles.empty()) return fail("mesh has no triangles");
  std::map<std::pair<std::size_t, std::size_t>, int> directed;
  for (const auto& tri : b.triangles) {
    for (std::size_t k = 0; k < 3; ++k) {
      if (tri[k] >= b.vertices.rows()) return fail("triangle index out of range");
      const std::size_t a = tri[k];
      const std::size_t c = tri[(k + 1) % 3];
      if (a == c) return fail("degenerate triangle");
      if (++directed[{a, c}] > 1) return fail("edge used twice with the same orientation");
    }
  }
  for (const auto& [edge, count] : directed)
    if (!directed.contains({edge.second, edge.first}))
      return fail("open edge (" + std::to_string(edge.first) + ", " + std::to_string(edge.second) + ")");
  return true;
}

bool contains(const BoundarySet& b, std::span<const double> p) {
  detail::require(p.size() == b.dim, "contains: point dimension mismatch");
  if (b.dim == 2) return contains_2d(b.vertices, p[0], p[1]);
  return contains_3d(b, {p[0], p[1], p[2]});
}

double coverage_fraction(const Matrix& points, const BoundarySet& b) {
  detail::require(points.rows() > 0, "coverage_fraction: no points");
  detail::require(points.cols() == b.dim, "coverage_fraction: point dimension mismatch");
  constexpr std::size_t kChunk = 1024;
  const std::size_t n_chunks = (points.rows() + kChunk - 1) / kChunk;
  std::vector<std::size_t> counts(n_chunks, 0);
  parallel_for(n_chunks, [&](std::size_t c) {
    const std::size_t end = std::min(points.rows(), (c + 1) * kChunk);
    for (std::size_t i = c * kChunk; i < end; ++i)
      if (contains(b, points.row(i))) ++counts[c];
  });
  std::size_t inside = 0;
  for (std::size_t c : counts) inside += c;
  return static_cast<double>(inside) / static_cast<double>(points.rows());
}

BoundarySet with_vertices(const BoundarySet& b, Matrix vertices) {
  detail::require(vertices.rows() == b.vertices.rows() && vertices.cols() == b.vertices.cols(),
                  "with_vertices: vertex array shape changed");
  BoundarySet out = b;
  out.vertices = std::move(vertices);
  return out;
}

std::vector<CoverageReport> coverage_experiment(const pfode::ScoreSource& source,
                                               const schedule::InflationSchedule& s,
                                               const pfode::Discretization& disc,
                                               const CoverageConfig& config) {
  const std::size_t d = s.dim();
  detail::require(d == 2 || d == 3, "coverage_experiment: only 2D and 3D are supported");
  detail::require(!config.radii.empty(), "coverage_experiment: no radii");
  detail::require(config.n_test >= 1, "coverage_experiment: n_test must be positive");
  const Vector cov = schedule::latent_cov(s);
  RngStream rng = RngStream(config.seed).substream(0);
  const Matrix test = sample_diag_gaussian(rng, config.n_test, Vector(d, 0.0), cov);

  std::vector<BoundarySet> balls;
  for (double r : config.radii) balls.push_back(make_ball_boundary(d, r, cov, config.n_boundary));
  std::vector<const Matrix*> parts{&test};
  for (const auto& b : balls) parts.push_back(&b.vertices);
  const Matrix latent = stack(parts, d);

  const Matrix generated =
      pfode::integrate(latent, disc, pfode::Direction::generate, config.solver, s, source).final_state;
  const Matrix returned =
      pfode::integrate(generated, disc, pfode::Direction::inflate, config.solver, s, source).final_state;

  const Matrix gen_test = rows_of(generated, 0, config.n_test);
  const Matrix back_test = rows_of(returned, 0, config.n_test);
  std::vector<CoverageReport> reports;
  std::size_t offset = config.n_test;
  for (const auto& ball : balls) {
    const std::size_t nv = ball.vertices.rows();
    const BoundarySet gen_ball = with_vertices(ball, rows_of(generated, offset, nv));
    const BoundarySet back_ball = with_vertices(ball, rows_of(returned, offset, nv));
    offset += nv;
    const double latent_frac = coverage_fraction(test, ball);
    const double data_frac = coverage_fraction(gen_test, gen_ball);
    const double back_frac = coverage_fraction(back_test, back_ball);
    reports.push_back({ball.mahal_radius, pfode::Direction::generate, latent_frac, data_frac,
                       config.n_test, nv, is_valid(gen_ball)});
    reports.push_back({ball.mahal_radius, pfode::Direction::inflate, data_frac, back_frac,
                       config.n_test, nv, is_valid(back_ball)});
  }
  return reports;
}

std::string to_json(const std::vector<CoverageReport>& reports) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : reports)
    arr.push_back({{"radius", r.radius},
                   {"direction", std::string(pfode::to_string(r.direction))},
                   {"frac_before", r.frac_before},
                   {"frac_after", r.frac_after},
                   {"n_test", r.n_test},
                   {"boundary_vertices", r.boundary_vertices},
                   {"topology_ok", r.topology_ok}});
  return arr.dump(2);
}

void write_off(const std::filesystem::path& path, const BoundarySet& b) {
  detail::require(b.dim == 3, "write_off: OFF export is for 3D meshes");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_off: cannot open " + path.string());
  out << "OFF\n" << b.vertices.rows() << ' ' << b.triangles.size() << " 0\n";
  for (std::size_t i = 0; i < b.vertices.rows(); ++i)
    out << datasets::format_double(b.vertices(i, 0)) << ' ' << datasets::format_double(b.vertices(i, 1))
        << ' ' << datasets::format_double(b.vertices(i, 2)) << '\n';
  for (const auto& t : b.triangles) out << "3 " << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
}

void write_boundary_csv(const std::filesystem::path& path, const BoundarySet& b) {
  datasets::write_csv(path, b.vertices);
}

}  // namespace inflare::boundary
