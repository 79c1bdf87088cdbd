#include "inflare/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "inflare/error.hpp"

namespace inflare::schedule {

namespace {

void check_exponent(double e) {
  if (!(std::abs(e) <= kMaxExponent))
    throw NumericalError("schedule: exponent " + std::to_string(e) +
                         " exceeds the overflow guard of 700");
}

void check_spectrum(std::span<const double> sigma0_sq, std::span<const double> g) {
  detail::require(!sigma0_sq.empty(), "schedule: empty spectrum");
  detail::require(sigma0_sq.size() == g.size(), "schedule: sigma0_sq and g lengths differ");
  for (double v : sigma0_sq) detail::require(v > 0.0, "schedule: sigma0_sq must be positive");
}

// sigma0_sq_j exp(rho (g_j - g*) t): the spectrum up to a common positive factor.
Vector relative_spectrum(std::span<const double> sigma0_sq, std::span<const double> g, double rho,
                         double t) {
  const double g_star = *std::max_element(g.begin(), g.end());
  Vector v(g.size());
  for (std::size_t j = 0; j < g.size(); ++j) {
    const double e = rho * (g[j] - g_star) * t;
    v[j] = sigma0_sq[j] * std::exp(std::max(e, -kMaxExponent));
  }
  return v;
}

}  // namespace

std::string_view to_string(ScheduleKind kind) { return kind == ScheduleKind::prp ? "prp" : "prr"; }

ScheduleKind parse_schedule_kind(std::string_view name) {
  if (name == "prp" || name == "PRP") return ScheduleKind::prp;
  if (name == "prr" || name == "PRR") return ScheduleKind::prr;
  throw InvalidArgument("unknown schedule kind '" + std::string(name) + "'");
}

InflationSchedule::InflationSchedule(ScheduleKind kind, double rho, Vector g, double t_max)
    : kind_(kind), rho_(rho), g_(std::move(g)), g_star_(0.0), t_max_(t_max) {
  detail::require(!g_.empty(), "InflationSchedule: g is empty");
  detail::require(std::isfinite(rho_) && rho_ > 0.0, "InflationSchedule: rho must be positive");
  detail::require(std::isfinite(t_max_) && t_max_ > 0.0, "InflationSchedule: t_max must be positive");
  for (double gj : g_) detail::require(std::isfinite(gj) && gj >= 0.0, "InflationSchedule: g must be finite and >= 0");
  g_star_ = *std::max_element(g_.begin(), g_.end());
  detail::require(g_star_ > 0.0, "InflationSchedule: max(g) must be positive");
  if (kind_ == ScheduleKind::prp)
    for (double gj : g_)
      detail::require(gj == g_star_, "InflationSchedule: PRP schedules need uniform g");
  for (std::size_t j = 0; j < g_.size(); ++j)
    if (g_[j] == g_star_) preserved_.push_back(j);
  check_exponent(rho_ * g_star_ * t_max_);
}

InflationSchedule InflationSchedule::prp(std::size_t d, double t_max, double rho) {
  detail::require(d >= 1, "prp: d must be >= 1");
  return InflationSchedule(ScheduleKind::prp, rho, Vector(d, 1.0), t_max);
}

InflationSchedule InflationSchedule::prr(std::size_t d, std::size_t preserved, double gap,
                                         double t_max, double rho, double g_preserved) {
  return InflationSchedule(ScheduleKind::prr, rho, build_g(d, preserved, gap, g_preserved), t_max);
}

double InflationSchedule::inflation_gap() const noexcept {
  return g_star_ - *std::min_element(g_.begin(), g_.end());
}

Vector build_g(std::size_t d, std::size_t preserved, double gap, double g_preserved) {
  detail::require(preserved >= 1 && preserved <= d, "build_g: preserved count K must be in [1, d]");
  detail::require(std::isfinite(g_preserved) && g_preserved > 0.0, "build_g: g_preserved must be positive");
  detail::require(std::isfinite(gap) && gap >= 0.0 && gap <= g_preserved,
                  "build_g: inflation gap must lie in [0, g_preserved]");
  Vector g(d, g_preserved - gap);
  std::fill(g.begin(), g.begin() + static_cast<std::ptrdiff_t>(preserved), g_preserved);
  return g;
}

ScheduleEval eval(const InflationSchedule& s, double t) {
  if (!(t >= 0.0 && t <= s.t_max()))
    throw InvalidArgument("schedule eval: t=" + std::to_string(t) + " outside [0, t_max=" +
                          std::to_string(s.t_max()) + "]");
  const std::size_t d = s.dim();
  ScheduleEval ev{t, Vector(d), Vector(d), Vector(d), Vector(d), Vector(d)};
  const double a_exp = -0.5 * s.rho() * s.g_star() * t;
  check_exponent(a_exp);
  const double alpha = std::exp(a_exp);
  const double alpha_dot = -0.5 * s.rho() * s.g_star() * alpha;
  for (std::size_t j = 0; j < d; ++j) {
    const double rate = s.rho() * s.g()[j];
    const double e = rate * t;
    check_exponent(e);
    ev.sigma2[j] = std::exp(e);
    ev.gamma[j] = std::expm1(e);
    ev.gamma_dot[j] = rate * ev.sigma2[j];
    ev.alpha[j] = alpha;
    ev.alpha_dot[j] = alpha_dot;
  }
  return ev;
}

Vector latent_cov(const InflationSchedule& s) {
  Vector out(s.dim());
  for (std::size_t j = 0; j < s.dim(); ++j) {
    const double e = -s.rho() * (s.g_star() - s.g()[j]) * s.t_max();
    check_exponent(e);
    out[j] = std::exp(e);
  }
  return out;
}

double pr_trajectory(std::span<const double> sigma0_sq, std::span<const double> g, double rho,
                     double t) {
  check_spectrum(sigma0_sq, g);
  const Vector v = relative_spectrum(sigma0_sq, g, rho, t);
  double s1 = 0.0;
  double s2 = 0.0;
  for (double x : v) {
    s1 += x;
    s2 += x * x;
  }
  return s1 * s1 / s2;
}

double calR(std::span<const double> sigma0_sq, std::span<const double> g, double rho, double t) {
  check_spectrum(sigma0_sq, g);
  const Vector v = relative_spectrum(sigma0_sq, g, rho, t);
  double sum = 0.0;
  double sum_g = 0.0;
  double sum_g2 = 0.0;
  for (std::size_t j = 0; j < v.size(); ++j) {
    sum += v[j];
    sum_g += g[j] * v[j];
    sum_g2 += g[j] * v[j] * v[j];
  }
  if (sum_g2 == 0.0) throw NumericalError("calR: zero denominator (all rates zero)");
  return sum * sum_g / sum_g2;
}

}  // namespace inflare::schedule
