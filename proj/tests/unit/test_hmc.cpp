#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "inflare/error.hpp"
#include "inflare/hmc.hpp"
#include "oracles.hpp"

using namespace inflare;
using namespace inflare::hmc;

namespace {

std::shared_ptr<const denoiser::TrainedDenoiser> small_model(const schedule::InflationSchedule& s) {
  const denoiser::DenoiserNet net(2, {12, 12}, 8);
  RngStream rng(77);
  Vector p = net.init_parameters(rng);
  return std::make_shared<const denoiser::TrainedDenoiser>(denoiser::TrainedDenoiser{
      net, p, p, s, {Vector(2, 0.0), Matrix::identity(2), Vector(2, 1.0), 0}, denoiser::TrainConfig{}, {}});
}

// The generator stops at t = 1e-2 and rescales by 1 / alpha there: G(z) = e^{0.01} z under PRP.
const double kGenScale = std::exp(0.01);

Generator identity_generator() {
  const auto s = schedule::InflationSchedule::prp(2, 7.01);
  return Generator(s, std::make_shared<const pfode::OracleGaussian>(s), pfode::edm_grid(8, 1e-2, 7.01));
}

double log_normal_diag(const double* x, const Vector& mean, const Vector& var) {
  double v = 0.0;
  for (std::size_t j = 0; j < mean.size(); ++j)
    v += -0.5 * std::log(2.0 * std::numbers::pi * var[j]) - 0.5 * (x[j] - mean[j]) * (x[j] - mean[j]) / var[j];
  return v;
}

// Independent posterior for the rescaling generator, up to an additive constant.
double reference_log_posterior(const Vector& q, const ObservationSet& obs, const GmmPrior& prior) {
  const std::size_t n = obs.x_obs.rows();
  const auto w = weights_from_logits(std::span<const double>(q).subspan(2 * n));
  double lp = 0.0;
  for (std::size_t b = 0; b < n; ++b) {
    const double* z = &q[2 * b];
    lp += log_normal_diag(obs.x_obs.row(b).data(), Vector{kGenScale * z[0], kGenScale * z[1]}, Vector(2, obs.noise_var));
    double mix = 0.0;
    for (std::size_t i = 0; i < kComponents; ++i) mix += w[i] * std::exp(log_normal_diag(z, prior.means[i], prior.covs[i]));
    lp += std::log(mix);
  }
  for (double wi : w) lp += std::log(wi);
  return lp;
}

}  // namespace

TEST(Logits, RoundTripAndPinnedLastComponent) {
  const std::array<double, 3> w{0.5, 0.25, 0.25};
  const auto l = logits_from_weights(w);
  EXPECT_NEAR(l[0], std::log(2.0), 1e-15);
  EXPECT_NEAR(l[1], 0.0, 1e-15);
  const auto back = weights_from_logits(l);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(back[i], w[i], 1e-15);
  const auto extreme = weights_from_logits(std::vector<double>{800.0, -800.0});
  EXPECT_NEAR(extreme[0], 1.0, 1e-15);
  EXPECT_TRUE(std::isfinite(extreme[1]));
}

TEST(Pack, Layout) {
  const Matrix z{{1, 2}, {3, 4}};
  const Vector q = pack(z, {0.5, 0.25, 0.25});
  ASSERT_EQ(q.size(), 6u);
  EXPECT_EQ((Vector{q.begin(), q.begin() + 4}), (Vector{1, 2, 3, 4}));
  EXPECT_EQ(unpack_latents(q, 2, 2), z);
}

TEST(Generator, ZeroFieldIsPureRescaling) {
  const auto gen = identity_generator();
  const Matrix z{{0.3, -1.2}, {2.0, 0.1}};
  Matrix expected = z;
  for (double& v : expected.data()) v *= kGenScale;
  EXPECT_LE(max_abs_diff(gen.apply(z), expected), 1e-12);
}

TEST(LogPosterior, MatchesIndependentFormulaUpToConstant) {
  const auto gen = identity_generator();
  const auto prior = GmmPrior::prp();
  RngStream rng(1);
  const auto obs = synthesize_observations(prior, 6, gen, rng);
  Vector grad(6 * 2 + 2);
  Vector q1 = pack(obs.z_true, {0.5, 0.25, 0.25});
  Vector q2 = q1;
  for (double& v : q2) v += rng.uniform(-0.3, 0.3);
  const double a = log_posterior_and_grad(q1, grad, obs, prior, gen) - log_posterior_and_grad(q2, grad, obs, prior, gen);
  const double b = reference_log_posterior(q1, obs, prior) - reference_log_posterior(q2, obs, prior);
  EXPECT_NEAR(a, b, 1e-9 * std::max(1.0, std::abs(b)));
}

TEST(LogPosterior, IdenticalComponentsLeaveOnlyTheLogitPrior) {
  const auto gen = identity_generator();
  GmmPrior prior = GmmPrior::prp();
  for (std::size_t i = 1; i < kComponents; ++i) {
    prior.means[i] = prior.means[0];
    prior.covs[i] = prior.covs[0];
  }
  RngStream rng(2);
  const auto obs = synthesize_observations(prior, 4, gen, rng);
  Vector grad(10);
  Vector q = pack(obs.z_true, {1.0 / 3, 1.0 / 3, 1.0 / 3});
  const double base = log_posterior_and_grad(q, grad, obs, prior, gen);
  const std::array<double, 3> w{0.6, 0.3, 0.1};
  const auto l = logits_from_weights(w);
  q[8] = l[0];
  q[9] = l[1];
  const double moved = log_posterior_and_grad(q, grad, obs, prior, gen);
  const double expected = std::log(w[0] * w[1] * w[2]) - 3.0 * std::log(1.0 / 3.0);
  EXPECT_NEAR(moved - base, expected, 1e-10);
}

TEST(LogPosterior, GradientMatchesFiniteDifferences) {
  const auto s = schedule::InflationSchedule::prr(2, 1, 1.02, 5.0, 1.0);
  const Generator gen(s, std::make_shared<const pfode::NetworkScore>(small_model(s)), pfode::edm_grid(8, 1e-2, 5.0));
  const auto prior = GmmPrior::prr();
  RngStream rng(3);
  const auto obs = synthesize_observations(prior, 2, gen, rng);
  Vector q = pack(obs.z_true, {0.4, 0.35, 0.25});
  for (double& v : q) v += rng.uniform(-0.05, 0.05);
  Vector grad(q.size()), scratch(q.size());
  log_posterior_and_grad(q, grad, obs, prior, gen);
  for (std::size_t k = 0; k < q.size(); ++k) {
    auto f = [&](const Vector& x) { return log_posterior_and_grad(x, scratch, obs, prior, gen); };
    EXPECT_LE(oracle::rel_err(grad[k], oracle::central_diff(f, q, k, 1e-6), 1e-3), 1e-3) << "k=" << k;
  }
}

TEST(LogPosterior, DecaysFarFromTruth) {
  const auto gen = identity_generator();
  const auto prior = GmmPrior::prp();
  RngStream rng(4);
  const auto obs = synthesize_observations(prior, 5, gen, rng);
  Vector grad(12);
  const Vector q = pack(obs.z_true, {0.5, 0.25, 0.25});
  Vector far = q;
  for (std::size_t k = 0; k < 10; ++k) far[k] += 10.0;
  EXPECT_LT(log_posterior_and_grad(far, grad, obs, prior, gen), log_posterior_and_grad(q, grad, obs, prior, gen) - 1e3);
  Vector bad = q;
  bad[0] = NAN;
  EXPECT_THROW(log_posterior_and_grad(bad, grad, obs, prior, gen), NumericalError);
  EXPECT_THROW(log_posterior_and_grad(Vector(3), grad, obs, prior, gen), InvalidArgument);
}

namespace {
const Target kStdNormal = [](std::span<const double> q, std::span<double> g) {
  double lp = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    lp -= 0.5 * q[i] * q[i];
    g[i] = -q[i];
  }
  return lp;
};
}  // namespace

TEST(Leapfrog, ReversibleAndSecondOrder) {
  Vector q{0.3, -1.0, 2.0}, p{1.0, 0.5, -0.2}, g(3);
  kStdNormal(q, g);
  const Vector q0 = q, p0 = p;
  leapfrog(q, p, g, 0.1, 25, kStdNormal);
  for (double& v : p) v = -v;
  leapfrog(q, p, g, 0.1, 25, kStdNormal);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(q[i], q0[i], 1e-10);
    EXPECT_NEAR(-p[i], p0[i], 1e-10);
  }
  auto energy_error = [&](double eps) {
    Vector qq = q0, pp = p0, gg(3);
    kStdNormal(qq, gg);
    auto h = [](const Vector& a, const Vector& b) {
      double e = 0;
      for (std::size_t i = 0; i < a.size(); ++i) e += 0.5 * (a[i] * a[i] + b[i] * b[i]);
      return e;
    };
    const double h0 = h(qq, pp);
    leapfrog(qq, pp, gg, eps, static_cast<std::size_t>(std::lround(0.8 / eps)), kStdNormal);
    return std::abs(h(qq, pp) - h0);
  };
  const double ratio = energy_error(0.04) / energy_error(0.01);
  EXPECT_GT(ratio, 16.0 * 0.8);
  EXPECT_LT(ratio, 16.0 * 1.25);
}

TEST(HmcRun, SamplesStandardNormal) {
  HmcConfig cfg;
  cfg.leapfrog_steps = 10;
  cfg.step_size = 0.2;
  cfg.samples = 10000;
  cfg.burn_in = 200;
  cfg.thin = 2;
  cfg.seed = 5;
  const Chain chain = hmc_run(cfg, Vector{3.0}, kStdNormal);
  ASSERT_EQ(chain.samples.size(), 10000u);
  EXPECT_GT(chain.acceptance_rate, 0.9);
  std::vector<double> xs;
  for (const auto& q : chain.samples) xs.push_back(q[0]);
  EXPECT_LE(oracle::ks_distance(xs, oracle::normal_cdf), 0.02);
  const Chain again = hmc_run(cfg, Vector{3.0}, kStdNormal);
  EXPECT_EQ(again.samples, chain.samples);
}

TEST(HmcRun, StuckChainRaises) {
  HmcConfig cfg;
  cfg.step_size = 1e3;
  cfg.samples = 10;
  cfg.burn_in = 0;
  cfg.max_consecutive_rejects = 5;
  EXPECT_THROW(hmc_run(cfg, Vector{1.0}, kStdNormal), NumericalError);
}

TEST(Summarize, Statistics) {
  Chain same;
  const auto l = logits_from_weights({0.5, 0.25, 0.25});
  for (int k = 0; k < 50; ++k) same.samples.push_back(Vector{9.0, l[0], l[1]});
  const auto s = summarize(same);
  for (int i = 0; i < 3; ++i) {
    EXPECT_NEAR(s.mean[i], i == 0 ? 0.5 : 0.25, 1e-14);
    EXPECT_NEAR(s.sd[i], 0.0, 1e-14);
    EXPECT_NEAR(s.q025[i], s.q975[i], 1e-14);
  }
  EXPECT_EQ(s.n, 50u);
  EXPECT_THROW(summarize(Chain{}), InvalidArgument);
  EXPECT_FALSE(summary_json(s).empty());
}

TEST(HmcConfig, Validation) {
  HmcConfig c;
  EXPECT_NO_THROW(c.validate());
  c.thin = 0;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = HmcConfig{};
  c.step_size = -1.0;
  EXPECT_THROW(c.validate(), InvalidArgument);
  EXPECT_EQ(HmcConfig::default_step(schedule::ScheduleKind::prp), 1e-2);
  EXPECT_EQ(HmcConfig::default_step(schedule::ScheduleKind::prr), 1e-3);
}
