#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "inflare/datasets.hpp"
#include "inflare/linalg.hpp"
#include "inflare/rng.hpp"
#include "inflare/schedule.hpp"

namespace inflare::denoiser {

inline constexpr double kDefaultTMin = 1e-7;
inline constexpr double kNoiseLevels = 1000.0;  // M in c_noise = (M - 1) t

// Per-axis preconditioning factors in the whitened basis at one time t.
struct Preconditioner {
  Vector c_in;    // (1 + gamma)^-1/2
  Vector c_skip;  // (1 + gamma)^-1
  Vector c_out;   // (gamma / (1 + gamma))^1/2
  Vector lambda;  // 1 / c_out
  double c_noise = 0.0;
};

// Throws for t < t_min (c_out degenerates) and for axes with gamma == 0.
Preconditioner precondition(const schedule::InflationSchedule& s, double t,
                            double t_min = kDefaultTMin, double noise_levels = kNoiseLevels);

struct LayoutEntry {
  std::string name;  // "W0", "b0", ...
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;  // 1 for biases

  std::size_t size() const noexcept { return rows * cols; }
  friend bool operator==(const LayoutEntry&, const LayoutEntry&) = default;
};

// F_theta: MLP on [c_in ⊙ x, embed(c_noise)] with SiLU hidden activations and
// a linear output layer. Weight matrices are stored row-major (out x in).
class DenoiserNet {
public:
  DenoiserNet(std::size_t data_dim, std::vector<std::size_t> hidden = {128, 128, 128},
              std::size_t embed_dim = 64);
  // Arbitrary widths [d + embed, ..., d]; used by tiny gradient-check nets.
  static DenoiserNet from_widths(std::vector<std::size_t> widths, std::size_t embed_dim);

  std::size_t data_dim() const noexcept { return widths_.back(); }
  std::size_t embed_dim() const noexcept { return embed_dim_; }
  const std::vector<std::size_t>& widths() const noexcept { return widths_; }
  const std::vector<LayoutEntry>& layout() const noexcept { return layout_; }
  std::size_t parameter_count() const noexcept { return parameter_count_; }
  std::size_t layer_count() const noexcept { return widths_.size() - 1; }

  // U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
  Vector init_parameters(RngStream& rng) const;

  friend bool operator==(const DenoiserNet&, const DenoiserNet&) = default;

private:
  DenoiserNet(std::vector<std::size_t> widths, std::size_t embed_dim, int);

  std::vector<std::size_t> widths_;
  std::size_t embed_dim_;
  std::vector<LayoutEntry> layout_;
  std::size_t parameter_count_ = 0;
};

// Sinusoidal features [cos(c f_k), sin(c f_k)], f_k = 10000^(-k / (E/2)).
void time_embedding(double c_noise, std::span<double> out);

// Raw network output F for a batch: rows of `scaled_inputs` are c_in ⊙ x, one
// c_noise per row.
Matrix network_output(const DenoiserNet& net, std::span<const double> params,
                      const Matrix& scaled_inputs, std::span<const double> c_noise);

// D(x, t) = c_skip ⊙ x + c_out ⊙ F(c_in ⊙ x; c_noise), rows of x whitened.
Matrix denoise(const DenoiserNet& net, std::span<const double> params,
               const schedule::InflationSchedule& s, const Matrix& x, double t,
               double t_min = kDefaultTMin);

// Rows of the result are (∂D/∂x)ᵀ cotangent for the matching rows of x.
Matrix denoise_vjp(const DenoiserNet& net, std::span<const double> params,
                   const schedule::InflationSchedule& s, const Matrix& x, double t,
                   const Matrix& cotangent, double t_min = kDefaultTMin);

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 512;
  std::size_t steps = 20000;
  double ema_half_life = 5e5;  // in training samples
  double t_min = kDefaultTMin;
  double noise_levels = kNoiseLevels;
  std::uint64_t seed = 0;
  std::size_t log_every = 100;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate(double t_max) const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct LossAndGrad {
  double loss = 0.0;
  Vector grad;
};

// Mean over the batch of ||F(c_in (y+n); c_noise) - (y - c_skip (y+n)) / c_out||^2
// with t ~ U(t_min, t_max), n ~ N(0, diag gamma(t)). The batch is split into
// fixed 128-row chunks; each chunk draws from its own substream and chunk
// gradients are summed in chunk order.
LossAndGrad loss_and_grad(const DenoiserNet& net, std::span<const double> params,
                          const Matrix& batch, RngStream& rng,
                          const schedule::InflationSchedule& s, const TrainConfig& config);

// Same objective with caller-fixed times and noise (one row each): the
// deterministic core used by gradient checks and by loss_and_grad.
LossAndGrad loss_and_grad_fixed(const DenoiserNet& net, std::span<const double> params,
                                const Matrix& y, std::span<const double> t, const Matrix& noise,
                                const schedule::InflationSchedule& s, const TrainConfig& config);

struct TrainingMetadata {
  std::vector<double> loss_curve;  // mean loss over each log_every window
  std::size_t steps_done = 0;
  double seconds = 0.0;

  friend bool operator==(const TrainingMetadata&, const TrainingMetadata&) = default;
};

struct TrainedDenoiser {
  DenoiserNet net;
  Vector params;
  Vector ema;
  schedule::InflationSchedule schedule;
  datasets::EigenFrame frame;
  TrainConfig config;
  TrainingMetadata meta;

  std::span<const double> eval_params(bool use_ema = true) const {
    return use_ema ? std::span<const double>(ema) : std::span<const double>(params);
  }
};

using ProgressFn = std::function<void(std::size_t step, double window_loss)>;

// Adam on loss_and_grad with an EMA of the parameters (decay 0.5^(batch/half_life)).
// Aborts with NumericalError if the loss becomes non-finite.
TrainedDenoiser train(const Matrix& whitened_data, const schedule::InflationSchedule& s,
                      const datasets::EigenFrame& frame, const TrainConfig& config,
                      const DenoiserNet& net, const ProgressFn& progress = {});

// Convenience wrappers over the EMA (or raw) parameters of a trained model.
Matrix forward(const TrainedDenoiser& model, const Matrix& x, double t, bool use_ema = true);
Vector forward(const TrainedDenoiser& model, std::span<const double> x, double t,
               bool use_ema = true);
Matrix input_vjp(const TrainedDenoiser& model, const Matrix& x, double t, const Matrix& cotangent,
                 bool use_ema = true);
Vector input_vjp(const TrainedDenoiser& model, std::span<const double> x, double t,
                 std::span<const double> cotangent, bool use_ema = true);

}  // namespace inflare::denoiser
