#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "inflare/linalg.hpp"

namespace inflare::schedule {

enum class ScheduleKind { prp, prr };

std::string_view to_string(ScheduleKind kind);
ScheduleKind parse_schedule_kind(std::string_view name);

inline constexpr double kDefaultRhoPrp = 2.0;
inline constexpr double kDefaultRhoPrr = 1.0;
inline constexpr double kDefaultGPreserved = 2.0;
inline constexpr double kMaxExponent = 700.0;

// Inflation schedule in the whitened eigenbasis (sigma0^2 = 1 per axis):
//   gamma_j(t) = exp(rho g_j t) - 1,   alpha(t) = exp(-rho g* t / 2).
// PRP is the special case g = 1.
class InflationSchedule {
public:
  InflationSchedule(ScheduleKind kind, double rho, Vector g, double t_max);

  static InflationSchedule prp(std::size_t d, double t_max, double rho = kDefaultRhoPrp);
  // First `preserved` axes inflate at g_preserved, the rest at g_preserved - gap.
  static InflationSchedule prr(std::size_t d, std::size_t preserved, double gap, double t_max,
                               double rho = kDefaultRhoPrr,
                               double g_preserved = kDefaultGPreserved);

  ScheduleKind kind() const noexcept { return kind_; }
  std::size_t dim() const noexcept { return g_.size(); }
  double rho() const noexcept { return rho_; }
  const Vector& g() const noexcept { return g_; }
  double g_star() const noexcept { return g_star_; }
  double t_max() const noexcept { return t_max_; }
  const std::vector<std::size_t>& preserved() const noexcept { return preserved_; }
  // g* - min(g); 0 for PRP.
  double inflation_gap() const noexcept;

  friend bool operator==(const InflationSchedule&, const InflationSchedule&) = default;

private:
  ScheduleKind kind_;
  double rho_;
  Vector g_;
  double g_star_;
  double t_max_;
  std::vector<std::size_t> preserved_;
};

struct ScheduleEval {
  double t = 0.0;
  Vector gamma;      // C_jj(t)
  Vector gamma_dot;  // dC_jj/dt
  Vector sigma2;     // 1 + gamma, computed as exp(rho g t) directly
  Vector alpha;      // A_jj(t)
  Vector alpha_dot;
};

Vector build_g(std::size_t d, std::size_t preserved, double gap,
               double g_preserved = kDefaultGPreserved);

ScheduleEval eval(const InflationSchedule& s, double t);

// alpha(t_max)^2 (1 + gamma(t_max)) = exp(-rho (g* - g_j) t_max); preserved axes are exactly 1.
Vector latent_cov(const InflationSchedule& s);

// PR of diag(sigma0_sq ⊙ exp(rho g t)).
double pr_trajectory(std::span<const double> sigma0_sq, std::span<const double> g, double rho,
                     double t);

// (Σγ)(Σgγ)/(Σgγ²) with γ_j = sigma0_sq_j exp(rho g_j t).
double calR(std::span<const double> sigma0_sq, std::span<const double> g, double rho, double t);

}  // namespace inflare::schedule
