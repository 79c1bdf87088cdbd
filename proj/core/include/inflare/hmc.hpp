#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "inflare/linalg.hpp"
#include "inflare/pfode.hpp"
#include "inflare/rng.hpp"
#include "inflare/schedule.hpp"

namespace inflare::hmc {

inline constexpr std::size_t kComponents = 3;
inline constexpr double kObservationNoiseVar = 1e-2;

// Three-component diagonal GMM over 2D latents.
struct GmmPrior {
  std::array<Vector, kComponents> means;
  std::array<Vector, kComponents> covs;
  std::array<double, kComponents> weights{};

  static GmmPrior prp();  // ground truth for the dimension-preserving circles run
  static GmmPrior prr();  // ground truth for the dimension-reducing circles run
  static GmmPrior for_schedule(schedule::ScheduleKind kind);

  std::size_t dim() const noexcept { return means[0].size(); }
  void validate() const;
};

// Latent z (rows) -> whitened data x through the generative pfODE.
class Generator {
public:
  Generator(schedule::InflationSchedule s, std::shared_ptr<const pfode::ScoreSource> source,
            pfode::Discretization disc, pfode::Solver solver = pfode::Solver::heun);

  Matrix apply(const Matrix& z) const;
  // Returns G(z); `grad` receives rows (∂G/∂z)ᵀ cotangent.
  Matrix apply_vjp(const Matrix& z, const Matrix& cotangent, Matrix& grad) const;
  Matrix apply_vjp(const Matrix& z, const pfode::UnrolledFlow::CotangentFn& cotangent,
                   Matrix& grad) const;
  std::size_t dim() const noexcept { return flow_.schedule().dim(); }

private:
  pfode::UnrolledFlow flow_;
  double out_scale_;  // 1 / alpha at the final grid time
};

struct ObservationSet {
  Matrix x_obs;
  double noise_var = kObservationNoiseVar;
  Matrix z_true;
  std::vector<std::size_t> labels;
  std::array<double, kComponents> w_true{};
};

// z ~ prior, x_obs = G(z) + N(0, noise_var I).
ObservationSet synthesize_observations(const GmmPrior& prior, std::size_t n, const Generator& gen,
                                       RngStream& rng, double noise_var = kObservationNoiseVar);

// Weights from additive-log-ratio logits (the last component's logit is pinned at 0).
std::array<double, kComponents> weights_from_logits(std::span<const double> logits);
std::array<double, kComponents - 1> logits_from_weights(const std::array<double, kComponents>& w);

// Parameter vector layout: [z_0, ..., z_{n-1} (row-major), logit_0, logit_1].
Vector pack(const Matrix& z, const std::array<double, kComponents>& w);
Matrix unpack_latents(std::span<const double> q, std::size_t n, std::size_t d);

// log N(x_obs; G(z), σ²I) + log Σ_i w_i N(z; μ_i, Σ_i) summed over observations,
// plus the flat Dirichlet prior and the log-Jacobian Σ_i log w_i of the
// logit map. Writes the gradient into `grad` (same layout as q).
double log_posterior_and_grad(std::span<const double> q, std::span<double> grad,
                              const ObservationSet& obs, const GmmPrior& prior, const Generator& gen);

// value(q, grad_out) -> log density.
using Target = std::function<double(std::span<const double>, std::span<double>)>;

struct HmcConfig {
  std::size_t leapfrog_steps = 15;
  double step_size = 1e-2;
  std::size_t samples = 300;  // retained after burn-in and thinning
  std::size_t burn_in = 500;
  std::size_t thin = 5;
  std::uint64_t seed = 0;
  std::size_t max_consecutive_rejects = 100;

  static double default_step(schedule::ScheduleKind kind) {
    return kind == schedule::ScheduleKind::prp ? 1e-2 : 1e-3;
  }
  void validate() const;
};

// L leapfrog steps of size eps for H = -log π(q) + |p|²/2, in place.
// Returns the log density at the final q; `grad` holds its gradient on entry and exit.
double leapfrog(Vector& q, Vector& p, Vector& grad, double step, std::size_t steps, const Target& target);

struct Chain {
  std::vector<Vector> samples;  // retained parameter vectors
  double acceptance_rate = 0.0;
  std::vector<double> energy_errors;  // H(end) - H(start) per proposal
  std::size_t proposals = 0;
};

using HmcProgress = std::function<void(std::size_t iteration, std::size_t total, double acceptance)>;

Chain hmc_run(const HmcConfig& config, const Vector& init, const Target& target,
              const HmcProgress& progress = {});

struct WeightSummary {
  std::array<double, kComponents> mean{};
  std::array<double, kComponents> sd{};
  std::array<double, kComponents> q025{};
  std::array<double, kComponents> q975{};
  double acceptance_rate = 0.0;
  std::size_t n = 0;
};

// Weight statistics on the simplex; the logits are the last two entries of each sample.
WeightSummary summarize(const Chain& chain);

void write_chain_csv(const std::filesystem::path& path, const Chain& chain);
std::string summary_json(const WeightSummary& s);

}  // namespace inflare::hmc
