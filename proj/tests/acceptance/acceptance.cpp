// End-to-end acceptance run. One PASS/FAIL line per criterion; exit status 1
// if any criterion fails. Criterion 10 (HMC) runs only with --slow.
//
//   acceptance [--slow] [--only N[,M...]] [--workdir DIR]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <map>
#include <memory>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>

#include "inflare/analysis.hpp"
#include "inflare/boundary.hpp"
#include "inflare/datasets.hpp"
#include "inflare/denoiser.hpp"
#include "inflare/hmc.hpp"
#include "inflare/pfode.hpp"
#include "inflare/rng.hpp"
#include "inflare/schedule.hpp"
#include "oracles.hpp"

using namespace inflare;
using schedule::InflationSchedule;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double oracle_pr(const std::vector<double>& lambda) {
  double sum = 0.0, sq = 0.0;
  for (double l : lambda) {
    sum += l;
    sq += l * l;
  }
  return sum * sum / sq;
}

Matrix gaussian(RngStream& rng, std::size_t n, std::size_t d) {
  Matrix m(n, d);
  rng.fill_normal(m.data());
  return m;
}

// Trained toy nets shared by several criteria, built on first use.
struct ToyModel {
  std::shared_ptr<const denoiser::TrainedDenoiser> model;
  Matrix train_whitened;
  double seconds = 0.0;
};

ToyModel train_circles(const InflationSchedule& s, std::uint64_t seed) {
  datasets::DatasetSpec spec;
  spec.kind = datasets::DatasetKind::circles;
  spec.n = 10000;
  spec.seed = seed;
  const auto st = datasets::standardize(datasets::generate(spec));
  const auto frame = datasets::estimate_eigenframe(st.cloud);
  ToyModel out;
  out.train_whitened = datasets::whiten(st.cloud.points, frame);
  denoiser::TrainConfig tc;
  tc.batch_size = 512;
  tc.steps = 20000;
  tc.seed = seed + 1;
  const auto t0 = std::chrono::steady_clock::now();
  out.model = std::make_shared<const denoiser::TrainedDenoiser>(
      denoiser::train(out.train_whitened, s, frame, tc, denoiser::DenoiserNet(2)));
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

const InflationSchedule& prp_schedule() {
  static const auto s = InflationSchedule::prp(2, 7.01);
  return s;
}

// Softened gap: g = [1.15, 0.85].
const InflationSchedule& prr_schedule() {
  static const auto s = InflationSchedule::prr(2, 1, 0.3, 11.01, 1.0, 1.15);
  return s;
}

const ToyModel& prp_model() {
  static const ToyModel m = train_circles(prp_schedule(), 0);
  return m;
}

const ToyModel& prr_model() {
  static const ToyModel m = train_circles(prr_schedule(), 100);
  return m;
}

Outcome zero_field() {
  const auto& s = prp_schedule();
  const pfode::OracleGaussian src(s);
  RngStream rng(1);
  const Matrix x = gaussian(rng, 10000, 2);
  const auto disc = pfode::uniform_grid(s.t_max(), 1e-2);
  double worst = 0.0;
  for (auto solver : {pfode::Solver::euler, pfode::Solver::heun})
    for (auto dir : {pfode::Direction::inflate, pfode::Direction::generate})
      worst = std::max(worst, max_abs_diff(pfode::integrate(x, disc, dir, solver, s, src).final_state, x));
  return {worst <= 1e-12, fmt("max |x_end - x_start| = %.3g (tol 1e-12)", worst)};
}

Outcome pr_dynamics() {
  const auto prp = InflationSchedule::prp(3, 7.01);
  const std::vector<double> sigma0{3.0, 1.0, 0.2};
  const double pr0 = oracle_pr(sigma0);
  double drift = 0.0;
  for (int i = 0; i <= 1000; ++i)
    drift = std::max(drift, std::abs(schedule::pr_trajectory(sigma0, prp.g(), prp.rho(), prp.t_max() * i / 1000.0) - pr0));
  const auto prr = InflationSchedule::prr(3, 2, 1.02, 30.0, 1.0);
  const double limit_err = std::abs(schedule::pr_trajectory(std::vector<double>(3, 1.0), prr.g(), prr.rho(), 30.0) - 2.0);
  return {drift <= 1e-12 && limit_err <= 1e-8,
          fmt("PRP drift %.3g (tol 1e-12); PRR |PR(30) - 2| = %.3g (tol 1e-8)", drift, limit_err)};
}

Outcome latent_variance() {
  const auto s = InflationSchedule::prr(2, 1, 1.02, 15.01, 1.0);
  const double v = schedule::latent_cov(s)[1];
  const double closed = std::exp(-15.3102);
  const double rel_reported = std::abs(v / 2.15e-7 - 1.0);
  return {rel_reported <= 0.05 && std::abs(v / closed - 1.0) <= 1e-12,
          fmt("compressed variance %.4g, closed form %.4g, %.2f%% from 2.15e-7 (tol 5%%)", v, closed, 100 * rel_reported)};
}

Outcome preconditioner() {
  double worst = 0.0;
  for (const auto& s : {prp_schedule(), prr_schedule()})
    for (int i = 0; i < 100; ++i) {
      const double t = 1e-3 + (s.t_max() - 1e-3) * i / 99.0;
      const auto p = denoiser::precondition(s, t);
      for (std::size_t j = 0; j < 2; ++j) {
        // gamma from the schedule definition, independent of the library.
        const double gamma = std::expm1(s.rho() * s.g()[j] * t);
        worst = std::max({worst, std::abs(p.c_in[j] * p.c_in[j] * (1.0 + gamma) - 1.0),
                          std::abs(p.lambda[j] * p.c_out[j] - 1.0),
                          std::abs(p.c_skip[j] + p.c_out[j] * p.c_out[j] - 1.0)});
      }
    }
  return {worst <= 1e-12, fmt("worst identity residual %.3g (tol 1e-12)", worst)};
}

Outcome equivalences() {
  const auto s = InflationSchedule::prr(3, 1, 0.6, 8.0, 1.0);
  RngStream rng(5);
  double fm = 0.0;
  for (int k = 0; k < 1000; ++k) {
    Vector x1(3);
    rng.fill_normal(x1);
    const Matrix x = gaussian(rng, 1, 3);
    const double t = rng.uniform(0.01, 8.0);
    const Matrix a = pfode::conditional_vf(x, t, x1, s);
    const Matrix b = pfode::rhs(x, t, s, pfode::ConditionalDeltaScore(s, x1));
    for (std::size_t j = 0; j < 3; ++j) fm = std::max(fm, std::abs(a(0, j) - b(0, j)) / std::max(1.0, std::abs(b(0, j))));
  }
  const auto iso = InflationSchedule::prp(2, 7.01);
  const pfode::OracleGaussian src(iso);
  double karras = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const Matrix x = gaussian(rng, 1, 2);
    const double t = rng.uniform(0.01, 7.0);
    // dx/dt = -a^2 c c' score(x) + (a'/a) x with a = e^{-rho t/2}, c^2 = e^{rho t} - 1,
    // score of N(0, a^2 (1 + c^2)).
    const double rho = iso.rho();
    const double a = std::exp(-0.5 * rho * t), a_dot = -0.5 * rho * a;
    const double c = std::sqrt(std::expm1(rho * t)), c_dot = 0.5 * rho * std::exp(rho * t) / c;
    const Matrix r = pfode::rhs(x, t, iso, src);
    for (std::size_t j = 0; j < 2; ++j) {
      const double score = -x(0, j) / (a * a * (1.0 + c * c));
      karras = std::max(karras, std::abs(r(0, j) - (-a * a * c * c_dot * score + a_dot / a * x(0, j))));
    }
  }
  return {fm <= 1e-10 && karras <= 1e-12,
          fmt("flow-matching %.3g (tol 1e-10); isotropic closed form %.3g (tol 1e-12)", fm, karras)};
}

Outcome solver_order() {
  const auto s = InflationSchedule::prr(2, 1, 1.02, 5.0, 1.0);
  const pfode::OracleGaussian src(s);
  const Matrix x{{0.8, 1.3}};
  // Exact solution: x_j(t) = x_j(0) exp(rho (g_j - g*) t / 2).
  const double exact = 1.3 * std::exp(0.5 * s.rho() * (s.g()[1] - s.g()[0]) * 5.0);
  auto err = [&](pfode::Solver solver, double h) {
    const auto out = pfode::integrate(x, pfode::uniform_grid(5.0, h), pfode::Direction::inflate, solver, s, src);
    return std::abs(out.final_state(0, 1) - exact);
  };
  const double heun = err(pfode::Solver::heun, 0.1) / err(pfode::Solver::heun, 0.05);
  const double euler = err(pfode::Solver::euler, 0.1) / err(pfode::Solver::euler, 0.05);
  return {heun >= 3.5 && heun <= 4.5 && euler >= 1.8 && euler <= 2.2,
          fmt("Heun ratio %.4f (want [3.5, 4.5]); Euler ratio %.4f (want [1.8, 2.2])", heun, euler)};
}

Outcome gradients() {
  RngStream rng(7);
  const auto s = InflationSchedule::prr(2, 1, 0.5, 5.0, 1.0);
  const auto net = denoiser::DenoiserNet::from_widths({2 + 4, 6, 5, 2}, 4);
  Vector params = net.init_parameters(rng);
  const Matrix y = gaussian(rng, 4, 2);
  const Matrix noise = gaussian(rng, 4, 2);
  const std::vector<double> t{0.3, 1.0, 2.5, 4.0};
  const denoiser::TrainConfig tc;
  const auto lg = denoiser::loss_and_grad_fixed(net, params, y, t, noise, s, tc);
  double param_err = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto f = [&](const Vector& p) { return denoiser::loss_and_grad_fixed(net, p, y, t, noise, s, tc).loss; };
    param_err = std::max(param_err, oracle::rel_err(lg.grad[k], oracle::central_diff(f, params, k, 1e-6), 1e-6));
  }

  const denoiser::TrainedDenoiser model{net, params, params, s, {Vector(2, 0.0), Matrix::identity(2), Vector(2, 1.0), 0}, tc, {}};
  double input_err = 0.0;
  for (double tt : {0.2, 3.0}) {
    Vector x(2), v(2);
    rng.fill_normal(x);
    rng.fill_normal(v);
    const Vector g = denoiser::input_vjp(model, x, tt, v);
    for (std::size_t k = 0; k < 2; ++k) {
      auto f = [&](const Vector& z) { return dot(denoiser::forward(model, z, tt), v); };
      input_err = std::max(input_err, oracle::rel_err(g[k], oracle::central_diff(f, x, k, 1e-6), 1e-6));
    }
  }

  auto shared = std::make_shared<const denoiser::TrainedDenoiser>(model);
  const hmc::Generator gen(s, std::make_shared<const pfode::NetworkScore>(shared), pfode::edm_grid(9, 1e-2, 5.0));
  const auto prior = hmc::GmmPrior::prr();
  RngStream obs_rng(8);
  const auto obs = hmc::synthesize_observations(prior, 2, gen, obs_rng);
  Vector q = hmc::pack(obs.z_true, {0.4, 0.35, 0.25});
  Vector grad(q.size()), scratch(q.size());
  hmc::log_posterior_and_grad(q, grad, obs, prior, gen);
  double hmc_err = 0.0;
  for (std::size_t k = 0; k < q.size(); ++k) {
    auto f = [&](const Vector& z) { return hmc::log_posterior_and_grad(z, scratch, obs, prior, gen); };
    hmc_err = std::max(hmc_err, oracle::rel_err(grad[k], oracle::central_diff(f, q, k, 1e-6), 1e-3));
  }
  return {param_err <= 1e-4 && input_err <= 1e-4 && hmc_err <= 1e-3,
          fmt("parameter grad %.3g, input vjp %.3g (tol 1e-4); HMC posterior grad %.3g (tol 1e-3)", param_err,
              input_err, hmc_err)};
}

Outcome roundtrip() {
  const auto& toy = prp_model();
  datasets::DatasetSpec spec;
  spec.kind = datasets::DatasetKind::circles;
  spec.n = 2000;
  spec.seed = 2;
  const Matrix held = datasets::whiten(datasets::standardize(datasets::generate(spec)).cloud.points, toy.model->frame);
  const pfode::NetworkScore src(toy.model);
  const auto disc = pfode::uniform_grid(prp_schedule().t_max(), 1e-2);
  const auto& s = prp_schedule();
  const auto up = pfode::integrate(held, disc, pfode::Direction::inflate, pfode::Solver::euler, s, src);
  const auto down = pfode::integrate(up.final_state, disc, pfode::Direction::generate, pfode::Solver::euler, s, src);
  const double mse = analysis::roundtrip_mse(held, down.final_state);
  const bool budget = toy.seconds <= 1800.0;
  return {mse <= 5e-2 && budget,
          fmt("roundtrip_mse %.3g on 2000 held-out points (tol 5e-2); training %.0f s (budget 1800 s)", mse, toy.seconds)};
}

Outcome coverage() {
  bool ok = true;
  std::ostringstream detail;
  for (const ToyModel* toy : {&prp_model(), &prr_model()}) {
    const auto& s = toy->model->schedule;
    const pfode::NetworkScore src(toy->model);
    boundary::CoverageConfig cfg;
    cfg.n_test = 5000;
    cfg.solver = pfode::Solver::euler;
    cfg.seed = 3;
    const auto reports = boundary::coverage_experiment(src, s, pfode::uniform_grid(s.t_max(), 1e-2), cfg);
    double worst = 0.0;
    for (const auto& r : reports) worst = std::max(worst, std::abs(r.change()));
    ok = ok && worst <= 0.05 && reports.size() == 14;
    detail << schedule::to_string(s.kind()) << " max |change| " << fmt("%.4f", worst) << "; ";
  }
  detail << "(tol 0.05, 7 radii, both directions)";
  return {ok, detail.str()};
}

Outcome hmc_calibration() {
  const auto& toy = prp_model();
  const auto& s = toy.model->schedule;
  auto src = std::make_shared<const pfode::NetworkScore>(toy.model);
  const hmc::Generator gen(s, src, pfode::edm_grid(33, 1e-2, s.t_max()), pfode::Solver::heun);
  const auto prior = hmc::GmmPrior::prp();
  RngStream obs_rng = RngStream(4).substream(0);
  const auto obs = hmc::synthesize_observations(prior, 200, gen, obs_rng);
  hmc::HmcConfig cfg;
  cfg.step_size = hmc::HmcConfig::default_step(s.kind());
  cfg.seed = 5;
  const hmc::Target target = [&](std::span<const double> q, std::span<double> g) {
    return hmc::log_posterior_and_grad(q, g, obs, prior, gen);
  };
  const auto chain = hmc::hmc_run(cfg, hmc::pack(obs.z_true, prior.weights), target);
  const auto sum = hmc::summarize(chain);
  bool ok = sum.n == 300;
  std::ostringstream detail;
  for (std::size_t i = 0; i < hmc::kComponents; ++i) {
    const double truth = prior.weights[i];
    ok = ok && std::abs(sum.mean[i] - truth) <= 0.1 && sum.q025[i] <= truth && truth <= sum.q975[i];
    detail << fmt("w%zu mean %.3f [%.3f, %.3f] truth %.2f; ", i, sum.mean[i], sum.q025[i], sum.q975[i], truth);
  }
  detail << fmt("acceptance %.2f", sum.acceptance_rate);
  return {ok, detail.str()};
}

Outcome residual_acf() {
  RngStream rng(11);
  const std::size_t n = 10000;
  std::vector<Matrix> white;
  std::vector<double> times;
  for (int k = 0; k < 40; ++k) {
    white.push_back(gaussian(rng, n, 2));
    times.push_back(0.01 * k);
  }
  const auto w = analysis::residual_autocorrelation(white, times, 39);
  double white_max = 0.0;
  for (std::size_t l = 1; l < w.values.size(); ++l) white_max = std::max(white_max, std::abs(w.values[l]));
  const double bound = 3.0 / std::sqrt(static_cast<double>(n));
  bool ok = white_max <= bound;
  std::ostringstream detail;
  detail << fmt("white noise max off-lag %.4f (tol %.4f); ", white_max, bound);
  for (const ToyModel* toy : {&prp_model(), &prr_model()}) {
    RngStream pick = RngStream(6).substream(0);
    Matrix start(200, 2);
    for (std::size_t i = 0; i < 200; ++i) {
      const auto row = toy->train_whitened.row(pick.index(toy->train_whitened.rows()));
      std::copy(row.begin(), row.end(), start.row(i).begin());
    }
    const auto rep = analysis::residual_autocorrelation(toy->model, toy->train_whitened, start,
                                                        pfode::uniform_grid(toy->model->schedule.t_max(), 1e-2), 100);
    const double m = rep.mean_abs_beyond(10);
    ok = ok && m <= 0.1;
    detail << schedule::to_string(toy->model->schedule.kind()) << fmt(" mean |acf| beyond 10 steps %.3f; ", m);
  }
  detail << "(tol 0.1)";
  return {ok, detail.str()};
}

Outcome containment() {
  RngStream rng(12);
  double worst = 0.0;
  for (int poly = 0; poly < 100; ++poly) {
    const std::size_t nv = 5 + poly % 30;
    std::vector<double> th(nv), xs(nv), ys(nv);
    for (double& t : th) t = rng.uniform(0.0, 2.0 * std::numbers::pi);
    std::sort(th.begin(), th.end());
    boundary::BoundarySet b;
    b.dim = 2;
    b.vertices = Matrix(nv, 2);
    for (std::size_t i = 0; i < nv; ++i) {
      const double r = rng.uniform(0.2, 2.0);
      xs[i] = b.vertices(i, 0) = r * std::cos(th[i]);
      ys[i] = b.vertices(i, 1) = r * std::sin(th[i]);
    }
    Matrix pts(10000, 2);
    std::size_t inside = 0;
    for (std::size_t k = 0; k < 10000; ++k) {
      pts(k, 0) = rng.uniform(-2.2, 2.2);
      pts(k, 1) = rng.uniform(-2.2, 2.2);
      inside += oracle::winding_number(xs, ys, pts(k, 0), pts(k, 1)) != 0;
    }
    worst = std::max(worst, std::abs(boundary::coverage_fraction(pts, b) - inside / 10000.0));
  }
  const Matrix g = sample_diag_gaussian(rng, 100000, Vector(2, 0.0), Vector(2, 1.0));
  const double frac = boundary::coverage_fraction(g, boundary::make_ball_boundary(2, 1.0, std::vector<double>{1.0, 1.0}, 2000));
  const double target = 1.0 - std::exp(-0.5);
  return {worst <= 1e-12 && std::abs(frac - target) <= 0.01,
          fmt("winding-number disagreement %.3g (tol 1e-12); radius-1 fraction %.5f vs %.5f (tol 0.01)", worst, frac,
              target)};
}

struct Criterion {
  int id;
  const char* name;
  double budget_s;
  std::function<Outcome()> run;
  bool slow = false;
};

}  // namespace

int main(int argc, char** argv) {
  bool slow = false;
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--slow") == 0) {
      slow = true;
    } else if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string tok; std::getline(ss, tok, ',');) only.insert(std::stoi(tok));
    } else {
      std::fprintf(stderr, "usage: acceptance [--slow] [--only N[,M...]]\n");
      return 2;
    }
  }

  const std::vector<Criterion> criteria{
      {1, "prp-zero-field", 5, zero_field},
      {2, "pr-dynamics", 1, pr_dynamics},
      {3, "latent-compressed-variance", 1, latent_variance},
      {4, "preconditioner-identities", 1, preconditioner},
      {5, "equivalence-suite", 5, equivalences},
      {6, "solver-order", 10, solver_order},
      {7, "gradient-oracles", 30, gradients},
      {8, "toy-training-roundtrip", 0, roundtrip},
      {9, "coverage-calibration", 600, coverage},
      {10, "hmc-calibration", 12 * 3600, hmc_calibration, true},
      {11, "residual-acf", 300, residual_acf},
      {12, "containment-oracle", 10, containment},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.contains(c.id)) continue;
    if (c.slow && !slow) {
      std::printf("SKIP %2d %-28s slow; run with --slow\n", c.id, c.name);
      continue;
    }
    // Models are trained outside the timed region; criterion 8 checks its own training budget.
    if (c.id == 9 || c.id == 11) {
      prp_model();
      prr_model();
    } else if (c.id == 10) {
      prp_model();
    }
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_budget = c.budget_s <= 0.0 || secs <= c.budget_s;
    const bool pass = o.pass && in_budget;
    failures += !pass;
    std::printf("%s %2d %-28s %s [%.2f s%s]\n", pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs,
                in_budget ? "" : ", over budget");
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
