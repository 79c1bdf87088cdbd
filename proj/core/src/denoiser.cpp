#include "inflare/denoiser.hpp"

#include <Eigen/Dense>
#include <chrono>
#include <cmath>
#include <string>

#include "inflare/error.hpp"
#include "inflare/parallel.hpp"

namespace inflare::denoiser {

namespace {

using EMat = Eigen::MatrixXd;
using RowMajorConstMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using RowMajorMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;
using VecMap = Eigen::Map<Eigen::VectorXd>;

constexpr std::size_t kChunkRows = 128;

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

struct Tape {
  std::vector<EMat> act;  // act[0] = input, act[k + 1] = silu(pre[k])
  std::vector<EMat> pre;  // hidden pre-activations
};

EMat run_forward(const DenoiserNet& net, std::span<const double> params, EMat input, Tape* tape) {
  const auto& layout = net.layout();
  const std::size_t n_layers = net.layer_count();
  EMat a = std::move(input);
  if (tape) {
    tape->act.clear();
    tape->pre.clear();
  }
  for (std::size_t l = 0; l < n_layers; ++l) {
    const LayoutEntry& w = layout[2 * l];
    const LayoutEntry& b = layout[2 * l + 1];
    RowMajorConstMap W(params.data() + w.offset, static_cast<Eigen::Index>(w.rows),
                       static_cast<Eigen::Index>(w.cols));
    ConstVecMap bias(params.data() + b.offset, static_cast<Eigen::Index>(b.rows));
    EMat z = W * a;
    z.colwise() += bias;
    if (tape) tape->act.push_back(std::move(a));
    if (l + 1 == n_layers) return z;
    a = z.unaryExpr([](double v) { return v * sigmoid(v); });
    if (tape) tape->pre.push_back(std::move(z));
  }
  return a;  // unreachable: a net always has at least one layer
}

// Reverse pass. `grad` (may be empty) accumulates parameter gradients;
// `d_input` (may be null) receives ∂/∂input.
void run_backward(const DenoiserNet& net, std::span<const double> params, const Tape& tape,
                  EMat delta, std::span<double> grad, EMat* d_input) {
  const auto& layout = net.layout();
  const std::size_t n_layers = net.layer_count();
  for (std::size_t l = n_layers; l-- > 0;) {
    const LayoutEntry& w = layout[2 * l];
    const LayoutEntry& b = layout[2 * l + 1];
    const EMat& a_prev = tape.act[l];
    if (!grad.empty()) {
      RowMajorMap gW(grad.data() + w.offset, static_cast<Eigen::Index>(w.rows),
                     static_cast<Eigen::Index>(w.cols));
      VecMap gb(grad.data() + b.offset, static_cast<Eigen::Index>(b.rows));
      gW.noalias() += delta * a_prev.transpose();
      gb += delta.rowwise().sum();
    }
    if (l == 0 && d_input == nullptr) break;
    RowMajorConstMap W(params.data() + w.offset, static_cast<Eigen::Index>(w.rows),
                       static_cast<Eigen::Index>(w.cols));
    EMat d_a = W.transpose() * delta;
    if (l == 0) {
      *d_input = std::move(d_a);
      break;
    }
    const EMat& z = tape.pre[l - 1];
    delta = d_a.binaryExpr(z, [](double g, double v) {
      const double s = sigmoid(v);
      return g * s * (1.0 + v * (1.0 - s));
    });
  }
}

void check_params(const DenoiserNet& net, std::span<const double> params) {
  detail::require(params.size() == net.parameter_count(),
                  "denoiser: parameter vector length does not match the layout");
}

// Column b = [c_in ⊙ x_b ; embed(c_noise_b)].
EMat build_input(const DenoiserNet& net, const Matrix& scaled_inputs,
                 std::span<const double> c_noise) {
  const std::size_t d = net.data_dim();
  const std::size_t e = net.embed_dim();
  detail::require(scaled_inputs.cols() == d, "denoiser: input dimension mismatch");
  detail::require(c_noise.size() == scaled_inputs.rows(), "denoiser: one c_noise per row required");
  EMat in(static_cast<Eigen::Index>(d + e), static_cast<Eigen::Index>(scaled_inputs.rows()));
  std::vector<double> emb(e);
  for (std::size_t b = 0; b < scaled_inputs.rows(); ++b) {
    const auto row = scaled_inputs.row(b);
    for (std::size_t j = 0; j < d; ++j) in(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(b)) = row[j];
    if (b == 0 || c_noise[b] != c_noise[b - 1]) time_embedding(c_noise[b], emb);
    for (std::size_t k = 0; k < e; ++k)
      in(static_cast<Eigen::Index>(d + k), static_cast<Eigen::Index>(b)) = emb[k];
  }
  return in;
}

// Names the first layer whose input went non-finite.
void check_layers_finite(const Tape& tape, const EMat& out) {
  for (std::size_t k = 0; k < tape.act.size(); ++k)
    if (!tape.act[k].allFinite())
      throw NumericalError("denoiser: non-finite activation entering layer " + std::to_string(k));
  if (!out.allFinite()) throw NumericalError("denoiser: non-finite network output");
}

struct ChunkResult {
  double loss_sum = 0.0;
  Vector grad;
};

ChunkResult chunk_loss_grad(const DenoiserNet& net, std::span<const double> params, const Matrix& y,
                            std::span<const double> t, const Matrix& noise,
                            const schedule::InflationSchedule& s, const TrainConfig& config,
                            double denominator) {
  const std::size_t d = net.data_dim();
  const std::size_t n = y.rows();
  Matrix scaled(n, d);
  Vector c_noise(n);
  EMat target(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(n));
  for (std::size_t b = 0; b < n; ++b) {
    const Preconditioner pc = precondition(s, t[b], config.t_min, config.noise_levels);
    const schedule::ScheduleEval ev = schedule::eval(s, t[b]);
    c_noise[b] = pc.c_noise;
    for (std::size_t j = 0; j < d; ++j) {
      const double yj = y(b, j);
      const double nj = noise(b, j);
      scaled(b, j) = pc.c_in[j] * (yj + nj);
      // (y - c_skip (y + n)) / c_out, rearranged as (gamma y - n) / sqrt(gamma (1 + gamma)).
      target(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(b)) =
          (ev.gamma[j] * yj - nj) / std::sqrt(ev.gamma[j] * ev.sigma2[j]);
    }
  }
  Tape tape;
  const EMat out = run_forward(net, params, build_input(net, scaled, c_noise), &tape);
  check_layers_finite(tape, out);
  const EMat resid = out - target;
  ChunkResult r;
  r.loss_sum = resid.squaredNorm();
  r.grad.assign(net.parameter_count(), 0.0);
  run_backward(net, params, tape, (2.0 / denominator) * resid, r.grad, nullptr);
  return r;
}

}  // namespace

Preconditioner precondition(const schedule::InflationSchedule& s, double t, double t_min,
                            double noise_levels) {
  if (!(t >= t_min))
    throw InvalidArgument("precondition: t=" + std::to_string(t) + " below t_min=" +
                          std::to_string(t_min));
  const schedule::ScheduleEval ev = schedule::eval(s, t);
  const std::size_t d = s.dim();
  Preconditioner pc{Vector(d), Vector(d), Vector(d), Vector(d), (noise_levels - 1.0) * t};
  for (std::size_t j = 0; j < d; ++j) {
    const double gamma = ev.gamma[j];
    const double total = ev.sigma2[j];
    if (!(gamma > 0.0))
      throw InvalidArgument("precondition: axis " + std::to_string(j) +
                            " has zero inflation (g_j = 0); c_out is degenerate");
    pc.c_in[j] = 1.0 / std::sqrt(total);
    pc.c_skip[j] = 1.0 / total;
    pc.c_out[j] = std::sqrt(gamma / total);
    pc.lambda[j] = std::sqrt(total / gamma);
  }
  return pc;
}

DenoiserNet::DenoiserNet(std::size_t data_dim, std::vector<std::size_t> hidden,
                         std::size_t embed_dim)
    : DenoiserNet(
          [&] {
            std::vector<std::size_t> w{data_dim + embed_dim};
            w.insert(w.end(), hidden.begin(), hidden.end());
            w.push_back(data_dim);
            return w;
          }(),
          embed_dim, 0) {}

DenoiserNet DenoiserNet::from_widths(std::vector<std::size_t> widths, std::size_t embed_dim) {
  return DenoiserNet(std::move(widths), embed_dim, 0);
}

DenoiserNet::DenoiserNet(std::vector<std::size_t> widths, std::size_t embed_dim, int)
    : widths_(std::move(widths)), embed_dim_(embed_dim) {
  detail::require(widths_.size() >= 2, "DenoiserNet: need at least input and output widths");
  for (std::size_t w : widths_) detail::require(w >= 1, "DenoiserNet: zero-width layer");
  detail::require(embed_dim_ % 2 == 0, "DenoiserNet: embedding dimension must be even");
  detail::require(widths_.front() == widths_.back() + embed_dim_,
                  "DenoiserNet: input width must equal data dim + embedding dim");
  std::size_t offset = 0;
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    layout_.push_back({"W" + std::to_string(l), offset, widths_[l + 1], widths_[l]});
    offset += widths_[l + 1] * widths_[l];
    layout_.push_back({"b" + std::to_string(l), offset, widths_[l + 1], 1});
    offset += widths_[l + 1];
  }
  parameter_count_ = offset;
}

Vector DenoiserNet::init_parameters(RngStream& rng) const {
  Vector p(parameter_count_);
  for (std::size_t k = 0; k < layout_.size(); ++k) {
    const LayoutEntry& entry = layout_[k];
    // Biases share the fan-in of the weight matrix right before them.
    const std::size_t fan_in = layout_[k - k % 2].cols;
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (std::size_t i = 0; i < entry.size(); ++i) p[entry.offset + i] = rng.uniform(-bound, bound);
  }
  return p;
}

void time_embedding(double c_noise, std::span<double> out) {
  const std::size_t half = out.size() / 2;
  for (std::size_t k = 0; k < half; ++k) {
    const double freq = std::pow(10000.0, -static_cast<double>(k) / static_cast<double>(half));
    out[k] = std::cos(c_noise * freq);
    out[half + k] = std::sin(c_noise * freq);
  }
}

Matrix network_output(const DenoiserNet& net, std::span<const double> params,
                      const Matrix& scaled_inputs, std::span<const double> c_noise) {
  check_params(net, params);
  Tape tape;
  const EMat out = run_forward(net, params, build_input(net, scaled_inputs, c_noise), &tape);
  check_layers_finite(tape, out);
  Matrix f(scaled_inputs.rows(), net.data_dim());
  for (std::size_t b = 0; b < f.rows(); ++b)
    for (std::size_t j = 0; j < f.cols(); ++j)
      f(b, j) = out(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(b));
  return f;
}

Matrix denoise(const DenoiserNet& net, std::span<const double> params,
               const schedule::InflationSchedule& s, const Matrix& x, double t, double t_min) {
  check_params(net, params);
  detail::require(x.cols() == net.data_dim() && s.dim() == net.data_dim(),
                  "denoise: dimension mismatch");
  detail::require(x.all_finite(), "denoise: non-finite input");
  const Preconditioner pc = precondition(s, t, t_min);
  Matrix scaled = x;
  for (std::size_t b = 0; b < x.rows(); ++b)
    for (std::size_t j = 0; j < x.cols(); ++j) scaled(b, j) *= pc.c_in[j];
  const Vector c_noise(x.rows(), pc.c_noise);
  const Matrix f = network_output(net, params, scaled, c_noise);
  Matrix out(x.rows(), x.cols());
  for (std::size_t b = 0; b < x.rows(); ++b)
    for (std::size_t j = 0; j < x.cols(); ++j)
      out(b, j) = pc.c_skip[j] * x(b, j) + pc.c_out[j] * f(b, j);
  return out;
}

Matrix denoise_vjp(const DenoiserNet& net, std::span<const double> params,
                   const schedule::InflationSchedule& s, const Matrix& x, double t,
                   const Matrix& cotangent, double t_min) {
  check_params(net, params);
  const std::size_t d = net.data_dim();
  detail::require(x.cols() == d && cotangent.cols() == d && cotangent.rows() == x.rows(),
                  "denoise_vjp: shape mismatch");
  const Preconditioner pc = precondition(s, t, t_min);
  Matrix scaled = x;
  for (std::size_t b = 0; b < x.rows(); ++b)
    for (std::size_t j = 0; j < d; ++j) scaled(b, j) *= pc.c_in[j];
  const Vector c_noise(x.rows(), pc.c_noise);
  Tape tape;
  const EMat out = run_forward(net, params, build_input(net, scaled, c_noise), &tape);
  check_layers_finite(tape, out);
  EMat d_out(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(x.rows()));
  for (std::size_t b = 0; b < x.rows(); ++b)
    for (std::size_t j = 0; j < d; ++j)
      d_out(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(b)) = pc.c_out[j] * cotangent(b, j);
  EMat d_in;
  run_backward(net, params, tape, std::move(d_out), {}, &d_in);
  Matrix result(x.rows(), d);
  for (std::size_t b = 0; b < x.rows(); ++b)
    for (std::size_t j = 0; j < d; ++j)
      result(b, j) = pc.c_skip[j] * cotangent(b, j) +
                     pc.c_in[j] * d_in(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(b));
  return result;
}

void TrainConfig::validate(double t_max) const {
  detail::require(learning_rate > 0.0, "TrainConfig: learning_rate must be positive");
  detail::require(batch_size >= 1, "TrainConfig: batch_size must be >= 1");
  detail::require(steps >= 1, "TrainConfig: steps must be >= 1");
  detail::require(ema_half_life > 0.0, "TrainConfig: ema_half_life must be positive");
  detail::require(t_min > 0.0 && t_min < t_max, "TrainConfig: need 0 < t_min < t_max");
  detail::require(noise_levels > 1.0, "TrainConfig: noise_levels must exceed 1");
  detail::require(log_every >= 1, "TrainConfig: log_every must be >= 1");
  detail::require(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0 &&
                      adam_eps > 0.0,
                  "TrainConfig: invalid Adam constants");
}

LossAndGrad loss_and_grad_fixed(const DenoiserNet& net, std::span<const double> params,
                                const Matrix& y, std::span<const double> t, const Matrix& noise,
                                const schedule::InflationSchedule& s, const TrainConfig& config) {
  check_params(net, params);
  detail::require(y.rows() > 0, "loss_and_grad: empty batch");
  detail::require(y.cols() == net.data_dim() && noise.rows() == y.rows() &&
                      noise.cols() == y.cols() && t.size() == y.rows(),
                  "loss_and_grad: shape mismatch");
  const ChunkResult r =
      chunk_loss_grad(net, params, y, t, noise, s, config, static_cast<double>(y.rows()));
  return {r.loss_sum / static_cast<double>(y.rows()), r.grad};
}

LossAndGrad loss_and_grad(const DenoiserNet& net, std::span<const double> params,
                          const Matrix& batch, RngStream& rng,
                          const schedule::InflationSchedule& s, const TrainConfig& config) {
  check_params(net, params);
  detail::require(batch.rows() > 0, "loss_and_grad: empty batch");
  detail::require(batch.cols() == net.data_dim(), "loss_and_grad: batch dimension mismatch");
  const std::size_t n = batch.rows();
  const std::size_t d = batch.cols();
  const std::size_t n_chunks = (n + kChunkRows - 1) / kChunkRows;
  const RngStream base(rng.next_u64());
  std::vector<ChunkResult> results(n_chunks);

  parallel_for(n_chunks, [&](std::size_t c) {
    const std::size_t begin = c * kChunkRows;
    const std::size_t rows = std::min(kChunkRows, n - begin);
    RngStream cr = base.substream(c);
    Matrix y(rows, d);
    Matrix noise(rows, d);
    Vector t(rows);
    for (std::size_t b = 0; b < rows; ++b) {
      t[b] = cr.uniform(config.t_min, s.t_max());
      const schedule::ScheduleEval ev = schedule::eval(s, t[b]);
      for (std::size_t j = 0; j < d; ++j) {
        y(b, j) = batch(begin + b, j);
        noise(b, j) = std::sqrt(ev.gamma[j]) * cr.normal();
      }
    }
    results[c] = chunk_loss_grad(net, params, y, t, noise, s, config, static_cast<double>(n));
  });

  LossAndGrad out{0.0, Vector(net.parameter_count(), 0.0)};
  for (const auto& r : results) {
    out.loss += r.loss_sum;
    for (std::size_t i = 0; i < out.grad.size(); ++i) out.grad[i] += r.grad[i];
  }
  out.loss /= static_cast<double>(n);
  return out;
}

TrainedDenoiser train(const Matrix& whitened_data, const schedule::InflationSchedule& s,
                      const datasets::EigenFrame& frame, const TrainConfig& config,
                      const DenoiserNet& net, const ProgressFn& progress) {
  config.validate(s.t_max());
  detail::require(whitened_data.rows() >= 1, "train: empty dataset");
  detail::require(whitened_data.cols() == s.dim() && net.data_dim() == s.dim() &&
                      frame.dim() == s.dim(),
                  "train: dimension mismatch between data, schedule, frame and net");
  detail::require(whitened_data.all_finite(), "train: non-finite data");
  for (std::size_t j = 0; j < s.dim(); ++j)
    detail::require(s.g()[j] > 0.0, "train: every axis needs g_j > 0 to be trainable");

  const auto start = std::chrono::steady_clock::now();
  const RngStream root(config.seed);
  RngStream init_rng = root.substream(0);
  RngStream batch_rng = root.substream(1);
  RngStream noise_rng = root.substream(2);

  TrainedDenoiser model{net, net.init_parameters(init_rng), {}, s, frame, config, {}};
  model.ema = model.params;
  const std::size_t p = net.parameter_count();
  Vector m(p, 0.0);
  Vector v(p, 0.0);
  const double ema_decay = std::pow(0.5, static_cast<double>(config.batch_size) / config.ema_half_life);
  const std::size_t d = s.dim();
  Matrix batch(config.batch_size, d);
  double window_sum = 0.0;
  std::size_t window_count = 0;

  for (std::size_t step = 1; step <= config.steps; ++step) {
    for (std::size_t b = 0; b < config.batch_size; ++b) {
      const auto row = whitened_data.row(batch_rng.index(whitened_data.rows()));
      std::copy(row.begin(), row.end(), batch.row(b).begin());
    }
    const LossAndGrad lg = loss_and_grad(net, model.params, batch, noise_rng, s, config);
    if (!std::isfinite(lg.loss))
      throw NumericalError("train: loss became non-finite at step " + std::to_string(step) +
                           " (last logged window loss " +
                           (model.meta.loss_curve.empty()
                                ? std::string("n/a")
                                : std::to_string(model.meta.loss_curve.back())) +
                           ")");
    const double bc1 = 1.0 - std::pow(config.adam_beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(config.adam_beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < p; ++i) {
      const double g = lg.grad[i];
      m[i] = config.adam_beta1 * m[i] + (1.0 - config.adam_beta1) * g;
      v[i] = config.adam_beta2 * v[i] + (1.0 - config.adam_beta2) * g * g;
      model.params[i] -= config.learning_rate * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + config.adam_eps);
      model.ema[i] = ema_decay * model.ema[i] + (1.0 - ema_decay) * model.params[i];
    }
    window_sum += lg.loss;
    ++window_count;
    if (window_count == config.log_every || step == config.steps) {
      const double window_loss = window_sum / static_cast<double>(window_count);
      model.meta.loss_curve.push_back(window_loss);
      if (progress) progress(step, window_loss);
      window_sum = 0.0;
      window_count = 0;
    }
    model.meta.steps_done = step;
  }
  model.meta.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return model;
}

Matrix forward(const TrainedDenoiser& model, const Matrix& x, double t, bool use_ema) {
  return denoise(model.net, model.eval_params(use_ema), model.schedule, x, t, model.config.t_min);
}

Vector forward(const TrainedDenoiser& model, std::span<const double> x, double t, bool use_ema) {
  const Matrix out = forward(model, Matrix(1, x.size(), Vector(x.begin(), x.end())), t, use_ema);
  return out.storage();
}

Matrix input_vjp(const TrainedDenoiser& model, const Matrix& x, double t, const Matrix& cotangent,
                 bool use_ema) {
  return denoise_vjp(model.net, model.eval_params(use_ema), model.schedule, x, t, cotangent,
                     model.config.t_min);
}

Vector input_vjp(const TrainedDenoiser& model, std::span<const double> x, double t,
                 std::span<const double> cotangent, bool use_ema) {
  const Matrix out =
      input_vjp(model, Matrix(1, x.size(), Vector(x.begin(), x.end())), t,
                Matrix(1, cotangent.size(), Vector(cotangent.begin(), cotangent.end())), use_ema);
  return out.storage();
}

}  // namespace inflare::denoiser
