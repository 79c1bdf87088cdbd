#include "oracle_checks.hpp"

#include <algorithm>
#include <cmath>

#include "inflare/denoiser.hpp"
#include "inflare/pfode.hpp"
#include "inflare/rng.hpp"
#include "inflare/schedule.hpp"

namespace inflare::cli {

namespace {

CheckResult zero_field(RngStream& rng) {
  const auto s = schedule::InflationSchedule::prp(2, 7.01);
  const pfode::OracleGaussian source(s);
  Matrix x(1000, 2);
  rng.fill_normal(x.data());
  const auto disc = pfode::uniform_grid(s.t_max(), 1e-2);
  const auto out = pfode::integrate(x, disc, pfode::Direction::inflate, pfode::Solver::heun, s, source);
  return {"prp_zero_field", max_abs_diff(x, out.final_state), 1e-12};
}

CheckResult pr_constant() {
  const auto s = schedule::InflationSchedule::prp(3, 7.01);
  const std::vector<double> sigma0{2.0, 1.0, 0.25};
  const double pr0 = schedule::pr_trajectory(sigma0, s.g(), s.rho(), 0.0);
  double worst = 0.0;
  for (int i = 0; i <= 100; ++i)
    worst = std::max(worst,
                     std::abs(schedule::pr_trajectory(sigma0, s.g(), s.rho(), s.t_max() * i / 100.0) - pr0));
  return {"prp_pr_constant", worst, 1e-12};
}

CheckResult pr_truncation() {
  const auto s = schedule::InflationSchedule::prr(3, 2, 1.02, 30.0, 1.0);
  const std::vector<double> sigma0{1.0, 1.0, 1.0};
  return {"prr_pr_limit", std::abs(schedule::pr_trajectory(sigma0, s.g(), s.rho(), 30.0) - 2.0), 1e-8};
}

CheckResult latent_variance() {
  const auto s = schedule::InflationSchedule::prr(2, 1, 1.02, 15.01, 1.0);
  const double v = schedule::latent_cov(s)[1];
  return {"prr_latent_variance", std::abs(v / std::exp(-1.02 * 15.01) - 1.0), 1e-12};
}

CheckResult preconditioner() {
  const auto s = schedule::InflationSchedule::prr(2, 1, 0.3, 7.01, 1.0);
  double worst = 0.0;
  for (int i = 1; i <= 100; ++i) {
    const double t = s.t_max() * i / 100.0;
    const auto p = denoiser::precondition(s, t);
    const auto e = schedule::eval(s, t);
    for (std::size_t j = 0; j < 2; ++j) {
      worst = std::max(worst, std::abs(p.c_in[j] * p.c_in[j] * (1.0 + e.gamma[j]) - 1.0));
      worst = std::max(worst, std::abs(p.lambda[j] * p.c_out[j] - 1.0));
      worst = std::max(worst, std::abs(p.c_skip[j] + p.c_out[j] * p.c_out[j] - 1.0));
    }
  }
  return {"preconditioner_identities", worst, 1e-12};
}

CheckResult flow_matching(RngStream& rng) {
  const auto s = schedule::InflationSchedule::prr(3, 1, 0.5, 5.0, 1.0);
  double worst = 0.0;
  for (int k = 0; k < 200; ++k) {
    Vector x1(3);
    rng.fill_normal(x1);
    Matrix x(1, 3);
    rng.fill_normal(x.data());
    const double t = 0.05 + rng.uniform() * 4.9;
    const pfode::ConditionalDeltaScore score(s, x1);
    const Matrix a = pfode::conditional_vf(x, t, x1, s);
    const Matrix b = pfode::rhs(x, t, s, score);
    for (std::size_t j = 0; j < 3; ++j)
      worst = std::max(worst, std::abs(a(0, j) - b(0, j)) / std::max(1.0, std::abs(b(0, j))));
  }
  return {"flow_matching_equivalence", worst, 1e-10};
}

CheckResult isotropic_form(RngStream& rng) {
  const auto s = schedule::InflationSchedule::prp(2, 7.01);
  const pfode::OracleGaussian source(s);
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    Matrix x(1, 2);
    rng.fill_normal(x.data());
    const double t = 0.01 + rng.uniform() * 7.0;
    const Matrix a = pfode::karras_isotropic_rhs(x, t, s, source);
    const Matrix b = pfode::rhs(x, t, s, source);
    worst = std::max(worst, max_abs_diff(a, b));
  }
  return {"isotropic_closed_form", worst, 1e-12};
}

}  // namespace

std::vector<CheckResult> run_oracle_checks(std::uint64_t seed) {
  RngStream root(seed);
  RngStream a = root.substream(0), b = root.substream(1), c = root.substream(2);
  return {zero_field(a),  pr_constant(),    pr_truncation(),   latent_variance(),
          preconditioner(), flow_matching(b), isotropic_form(c)};
}

}  // namespace inflare::cli
