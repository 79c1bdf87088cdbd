#include "inflare/hmc.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <json.hpp>
#include <numbers>

#include "inflare/datasets.hpp"
#include "inflare/error.hpp"

namespace inflare::hmc {

namespace {

// Type-7 quantile of an ascending-sorted sample.
double quantile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

double log_sum_exp(const std::array<double, kComponents>& v) {
  const double m = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace

GmmPrior GmmPrior::prp() {
  return {{Vector{0.0, 0.0}, Vector{-5e-2, 0.0}, Vector{5e-2, 0.0}},
          {Vector{5.625e-1, 5.625e-1}, Vector{1e-2, 1.0}, Vector{1.0, 1e-2}},
          {0.5, 0.25, 0.25}};
}

GmmPrior GmmPrior::prr() {
  return {{Vector{0.0, 0.0}, Vector{-5e-2, 0.0}, Vector{5e-2, 0.0}},
          {Vector{5.625e-1, 5.625e-3}, Vector{1e-2, 1e-2}, Vector{1.0, 1e-4}},
          {0.5, 0.25, 0.25}};
}

GmmPrior GmmPrior::for_schedule(schedule::ScheduleKind kind) {
  return kind == schedule::ScheduleKind::prp ? prp() : prr();
}

void GmmPrior::validate() const {
  const std::size_t d = dim();
  detail::require(d >= 1, "GmmPrior: empty means");
  double total = 0.0;
  for (std::size_t i = 0; i < kComponents; ++i) {
    detail::require(means[i].size() == d && covs[i].size() == d, "GmmPrior: ragged components");
    for (double c : covs[i]) detail::require(c > 0.0, "GmmPrior: covariances must be positive");
    detail::require(weights[i] >= 0.0, "GmmPrior: weights must be non-negative");
    total += weights[i];
  }
  detail::require(std::abs(total - 1.0) < 1e-12, "GmmPrior: weights must sum to 1");
}

Generator::Generator(schedule::InflationSchedule s, std::shared_ptr<const pfode::ScoreSource> source,
                     pfode::Discretization disc, pfode::Solver solver)
    : flow_(s, std::move(source), disc, solver, pfode::Direction::generate),
      out_scale_(1.0 / schedule::eval(s, disc.times.front()).alpha[0]) {}

Matrix Generator::apply(const Matrix& z) const {
  Matrix x = flow_.apply(z);
  for (double& v : x.data()) v *= out_scale_;
  return x;
}

Matrix Generator::apply_vjp(const Matrix& z, const Matrix& cotangent, Matrix& grad) const {
  Matrix x = flow_.apply_vjp(z, cotangent, grad);
  for (double& v : x.data()) v *= out_scale_;
  for (double& v : grad.data()) v *= out_scale_;
  return x;
}

Matrix Generator::apply_vjp(const Matrix& z, const pfode::UnrolledFlow::CotangentFn& cotangent,
                            Matrix& grad) const {
  const double scale = out_scale_;
  Matrix x = flow_.apply_vjp(
      z,
      [&](const Matrix& out, std::size_t begin) {
        Matrix scaled = out;
        for (double& v : scaled.data()) v *= scale;
        Matrix c = cotangent(scaled, begin);
        for (double& v : c.data()) v *= scale;
        return c;
      },
      grad);
  for (double& v : x.data()) v *= out_scale_;
  return x;
}

ObservationSet synthesize_observations(const GmmPrior& prior, std::size_t n, const Generator& gen,
                                       RngStream& rng, double noise_var) {
  prior.validate();
  detail::require(n >= 1, "synthesize_observations: n must be positive");
  detail::require(noise_var >= 0.0, "synthesize_observations: noise variance must be >= 0");
  detail::require(prior.dim() == gen.dim(), "synthesize_observations: prior/generator dimension mismatch");
  const std::size_t d = prior.dim();
  ObservationSet obs;
  obs.noise_var = noise_var;
  obs.w_true = prior.weights;
  obs.z_true = Matrix(n, d);
  obs.labels.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    const double u = rng.uniform();
    std::size_t k = 0;
    double cum = prior.weights[0];
    while (k + 1 < kComponents && u >= cum) cum += prior.weights[++k];
    obs.labels[j] = k;
    const Vector z = sample_diag_gaussian(rng, prior.means[k], prior.covs[k]);
    std::copy(z.begin(), z.end(), obs.z_true.row(j).begin());
  }
  obs.x_obs = gen.apply(obs.z_true);
  if (noise_var > 0.0) {
    const double sd = std::sqrt(noise_var);
    for (double& v : obs.x_obs.data()) v += sd * rng.normal();
  }
  return obs;
}

std::array<double, kComponents> weights_from_logits(std::span<const double> logits) {
  detail::require(logits.size() == kComponents - 1, "weights_from_logits: expected 2 logits");
  const std::array<double, kComponents> a{logits[0], logits[1], 0.0};
  const double lse = log_sum_exp(a);
  return {std::exp(a[0] - lse), std::exp(a[1] - lse), std::exp(a[2] - lse)};
}

std::array<double, kComponents - 1> logits_from_weights(const std::array<double, kComponents>& w) {
  for (double x : w) detail::require(x > 0.0, "logits_from_weights: weights must be positive");
  return {std::log(w[0] / w[2]), std::log(w[1] / w[2])};
}

Vector pack(const Matrix& z, const std::array<double, kComponents>& w) {
  Vector q(z.storage());
  const auto a = logits_from_weights(w);
  q.insert(q.end(), a.begin(), a.end());
  return q;
}

Matrix unpack_latents(std::span<const double> q, std::size_t n, std::size_t d) {
  detail::require(q.size() == n * d + kComponents - 1, "unpack_latents: parameter length mismatch");
  return Matrix(n, d, Vector(q.begin(), q.begin() + static_cast<std::ptrdiff_t>(n * d)));
}

double log_posterior_and_grad(std::span<const double> q, std::span<double> grad,
                              const ObservationSet& obs, const GmmPrior& prior, const Generator& gen) {
  const std::size_t n = obs.x_obs.rows();
  const std::size_t d = obs.x_obs.cols();
  detail::require(d == prior.dim() && d == gen.dim(), "log_posterior: dimension mismatch");
  detail::require(q.size() == n * d + kComponents - 1 && grad.size() == q.size(),
                  "log_posterior: parameter length mismatch");
  detail::require(obs.noise_var > 0.0, "log_posterior: observation noise variance must be positive");
  for (double v : q)
    if (!std::isfinite(v)) throw NumericalError("log_posterior: non-finite parameter");

  const Matrix z = unpack_latents(q, n, d);
  const std::span<const double> logits = q.subspan(n * d);
  const auto w = weights_from_logits(logits);
  const double inv_var = 1.0 / obs.noise_var;
  const double two_pi = 2.0 * std::numbers::pi;

  // Likelihood: cotangent of Σ_j log N(x_obs,j; G(z_j), σ²I) w.r.t. G is (x_obs - G)/σ².
  std::vector<double> lik_parts(n, 0.0);
  Matrix z_grad;
  gen.apply_vjp(
      z,
      [&](const Matrix& out, std::size_t begin) {
        Matrix c(out.rows(), d);
        for (std::size_t b = 0; b < out.rows(); ++b) {
          double sq = 0.0;
          for (std::size_t k = 0; k < d; ++k) {
            const double r = obs.x_obs(begin + b, k) - out(b, k);
            sq += r * r;
            c(b, k) = r * inv_var;
          }
          lik_parts[begin + b] = -0.5 * sq * inv_var - 0.5 * static_cast<double>(d) * std::log(two_pi * obs.noise_var);
        }
        return c;
      },
      z_grad);

  double log_p = 0.0;
  for (double v : lik_parts) log_p += v;

  // GMM prior on each z_j and the responsibility-weighted logit gradient.
  std::array<double, kComponents> log_norm{};
  for (std::size_t i = 0; i < kComponents; ++i) {
    double s = 0.0;
    for (double c : prior.covs[i]) s += std::log(two_pi * c);
    log_norm[i] = -0.5 * s;
  }
  std::array<double, kComponents> resp_total{};
  for (std::size_t j = 0; j < n; ++j) {
    std::array<double, kComponents> lc{};
    for (std::size_t i = 0; i < kComponents; ++i) {
      double quad = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = z(j, k) - prior.means[i][k];
        quad += diff * diff / prior.covs[i][k];
      }
      lc[i] = std::log(w[i]) + log_norm[i] - 0.5 * quad;
    }
    const double lse = log_sum_exp(lc);
    log_p += lse;
    for (std::size_t i = 0; i < kComponents; ++i) {
      const double r = std::exp(lc[i] - lse);
      resp_total[i] += r;
      for (std::size_t k = 0; k < d; ++k)
        z_grad(j, k) -= r * (z(j, k) - prior.means[i][k]) / prior.covs[i][k];
    }
  }

  // Flat Dirichlet(1,1,1) has density Γ(3) = 2 on the simplex; the logit map adds Σ log w_i.
  log_p += std::log(2.0);
  for (double wi : w) log_p += std::log(wi);

  if (!std::isfinite(log_p)) throw NumericalError("log_posterior: non-finite value");
  std::copy(z_grad.data().begin(), z_grad.data().end(), grad.begin());
  for (std::size_t k = 0; k + 1 < kComponents; ++k)
    grad[n * d + k] = (resp_total[k] - static_cast<double>(n) * w[k]) + (1.0 - kComponents * w[k]);
  return log_p;
}

void HmcConfig::validate() const {
  detail::require(leapfrog_steps >= 1, "HmcConfig: leapfrog_steps must be >= 1");
  detail::require(std::isfinite(step_size) && step_size > 0.0, "HmcConfig: step_size must be positive");
  detail::require(samples >= 1, "HmcConfig: samples must be >= 1");
  detail::require(thin >= 1, "HmcConfig: thin must be >= 1");
  detail::require(max_consecutive_rejects >= 1, "HmcConfig: max_consecutive_rejects must be >= 1");
}

double leapfrog(Vector& q, Vector& p, Vector& grad, double step, std::size_t steps, const Target& target) {
  detail::require(q.size() == p.size() && q.size() == grad.size(), "leapfrog: size mismatch");
  double log_p = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) p[i] += 0.5 * step * grad[i];
  for (std::size_t l = 0; l < steps; ++l) {
    for (std::size_t i = 0; i < q.size(); ++i) q[i] += step * p[i];
    log_p = target(q, grad);
    const double w = l + 1 == steps ? 0.5 : 1.0;
    for (std::size_t i = 0; i < p.size(); ++i) p[i] += w * step * grad[i];
  }
  return log_p;
}

Chain hmc_run(const HmcConfig& config, const Vector& init, const Target& target,
              const HmcProgress& progress) {
  config.validate();
  detail::require(!init.empty(), "hmc_run: empty initial state");
  RngStream rng = RngStream(config.seed).substream(0);
  Vector q = init;
  Vector grad(q.size());
  double log_p = target(q, grad);
  if (!std::isfinite(log_p)) throw NumericalError("hmc_run: initial state has non-finite log density");

  Chain chain;
  const std::size_t total = config.burn_in + config.samples * config.thin;
  std::size_t accepted = 0;
  std::size_t consecutive_rejects = 0;
  Vector p(q.size());
  for (std::size_t it = 0; it < total; ++it) {
    rng.fill_normal(p);
    double kinetic0 = 0.0;
    for (double v : p) kinetic0 += 0.5 * v * v;
    const double h0 = -log_p + kinetic0;

    Vector q_new = q;
    Vector grad_new = grad;
    double log_p_new = -std::numeric_limits<double>::infinity();
    bool ok = true;
    try {
      log_p_new = leapfrog(q_new, p, grad_new, config.step_size, config.leapfrog_steps, target);
    } catch (const NumericalError&) {
      ok = false;
    }
    double kinetic1 = 0.0;
    for (double v : p) kinetic1 += 0.5 * v * v;
    const double h1 = -log_p_new + kinetic1;
    const double delta = h1 - h0;
    ok = ok && std::isfinite(delta);
    chain.energy_errors.push_back(ok ? delta : std::numeric_limits<double>::infinity());
    ++chain.proposals;

    if (ok && std::log(rng.uniform()) < -delta) {
      q = std::move(q_new);
      grad = std::move(grad_new);
      log_p = log_p_new;
      ++accepted;
      consecutive_rejects = 0;
    } else if (++consecutive_rejects >= config.max_consecutive_rejects) {
      throw NumericalError("hmc_run: " + std::to_string(consecutive_rejects) +
                           " consecutive rejections at iteration " + std::to_string(it) +
                           " (last energy error " + std::to_string(delta) + ", step " +
                           std::to_string(config.step_size) + ")");
    }
    if (it >= config.burn_in && (it - config.burn_in + 1) % config.thin == 0) chain.samples.push_back(q);
    if (progress) progress(it + 1, total, static_cast<double>(accepted) / static_cast<double>(it + 1));
  }
  chain.acceptance_rate = static_cast<double>(accepted) / static_cast<double>(total);
  return chain;
}

WeightSummary summarize(const Chain& chain) {
  detail::require(!chain.samples.empty(), "summarize: empty chain");
  WeightSummary s;
  s.n = chain.samples.size();
  s.acceptance_rate = chain.acceptance_rate;
  std::array<std::vector<double>, kComponents> cols;
  for (const auto& q : chain.samples) {
    detail::require(q.size() >= kComponents - 1, "summarize: sample too short to hold logits");
    const auto w = weights_from_logits(std::span<const double>(q).subspan(q.size() - (kComponents - 1)));
    for (std::size_t i = 0; i < kComponents; ++i) cols[i].push_back(w[i]);
  }
  for (std::size_t i = 0; i < kComponents; ++i) {
    auto& c = cols[i];
    double mean = 0.0;
    for (double v : c) mean += v;
    mean /= static_cast<double>(c.size());
    double var = 0.0;
    for (double v : c) var += (v - mean) * (v - mean);
    var /= static_cast<double>(c.size());
    std::sort(c.begin(), c.end());
    s.mean[i] = mean;
    s.sd[i] = std::sqrt(var);
    s.q025[i] = quantile(c, 0.025);
    s.q975[i] = quantile(c, 0.975);
  }
  return s;
}

void write_chain_csv(const std::filesystem::path& path, const Chain& chain) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_chain_csv: cannot open " + path.string());
  out << "w0,w1,w2,logit0,logit1\n";
  for (const auto& q : chain.samples) {
    const auto logits = std::span<const double>(q).subspan(q.size() - (kComponents - 1));
    const auto w = weights_from_logits(logits);
    out << datasets::format_double(w[0]) << ',' << datasets::format_double(w[1]) << ','
        << datasets::format_double(w[2]) << ',' << datasets::format_double(logits[0]) << ','
        << datasets::format_double(logits[1]) << '\n';
  }
}

std::string summary_json(const WeightSummary& s) {
  nlohmann::json j = {{"mean", s.mean},           {"sd", s.sd},
                      {"q025", s.q025},           {"q975", s.q975},
                      {"acceptance_rate", s.acceptance_rate}, {"n", s.n}};
  return j.dump(2);
}

}  // namespace inflare::hmc
