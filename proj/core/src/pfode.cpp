#include "inflare/pfode.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "inflare/datasets.hpp"
#include "inflare/error.hpp"
#include "inflare/parallel.hpp"

namespace inflare::pfode {

namespace {

constexpr std::size_t kChunkRows = 128;

void check_dim(const Matrix& x, const schedule::InflationSchedule& s, const char* who) {
  if (x.cols() != s.dim())
    throw InvalidArgument(std::string(who) + ": expected " + std::to_string(s.dim()) +
                          " columns, got " + std::to_string(x.cols()));
}

void check_same_shape(const Matrix& a, const Matrix& b, const char* who) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw InvalidArgument(std::string(who) + ": shape mismatch");
}

void require_positive_gamma(const schedule::ScheduleEval& ev, const char* who) {
  for (double g : ev.gamma)
    if (!(g > 0.0))
      throw InvalidArgument(std::string(who) + ": score is singular where gamma = 0 (t=" +
                            std::to_string(ev.t) + ")");
}

Matrix slice_rows(const Matrix& m, std::size_t begin, std::size_t count) {
  Matrix out(count, m.cols());
  std::copy_n(m.data().begin() + static_cast<std::ptrdiff_t>(begin * m.cols()), count * m.cols(),
              out.data().begin());
  return out;
}

void place_rows(Matrix& dst, std::size_t begin, const Matrix& src) {
  std::copy(src.data().begin(), src.data().end(),
            dst.data().begin() + static_cast<std::ptrdiff_t>(begin * dst.cols()));
}

void check_finite_state(const Matrix& x, std::size_t step, double t) {
  if (!x.all_finite())
    throw NumericalError("integrate: non-finite state after step " + std::to_string(step) +
                         " (t=" + std::to_string(t) + ")");
}

// Traversal order of the grid for a direction.
std::vector<double> ordered_times(const Discretization& disc, Direction direction) {
  std::vector<double> times = disc.times;
  if (direction == Direction::generate) std::reverse(times.begin(), times.end());
  return times;
}

bool skip_corrector(double t_next, const ScoreSource& source) {
  return t_next == 0.0 && source.min_time() > 0.0;
}

Matrix axpy(const Matrix& x, double h, const Matrix& k) {
  Matrix out = x;
  auto o = out.data();
  auto kd = k.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += h * kd[i];
  return out;
}

}  // namespace

Matrix OracleGaussian::score(const Matrix& x, double t) const {
  return oracle_score(x, t, schedule_);
}

Matrix OracleGaussian::score_vjp(const Matrix& x, double t, const Matrix& v) const {
  check_dim(x, schedule_, "OracleGaussian");
  check_same_shape(x, v, "OracleGaussian::score_vjp");
  const auto ev = schedule::eval(schedule_, t);
  Matrix out(v.rows(), v.cols());
  for (std::size_t b = 0; b < v.rows(); ++b)
    for (std::size_t j = 0; j < v.cols(); ++j) out(b, j) = -v(b, j) / ev.sigma2[j];
  return out;
}

ConditionalDeltaScore::ConditionalDeltaScore(schedule::InflationSchedule s, Vector x1)
    : schedule_(std::move(s)), x1_(std::move(x1)) {
  detail::require(x1_.size() == schedule_.dim(), "ConditionalDeltaScore: x1 dimension mismatch");
}

Matrix ConditionalDeltaScore::score(const Matrix& x, double t) const {
  check_dim(x, schedule_, "ConditionalDeltaScore");
  const auto ev = schedule::eval(schedule_, t);
  require_positive_gamma(ev, "ConditionalDeltaScore");
  Matrix out(x.rows(), x.cols());
  for (std::size_t b = 0; b < x.rows(); ++b)
    for (std::size_t j = 0; j < x.cols(); ++j) out(b, j) = -(x(b, j) - x1_[j]) / ev.gamma[j];
  return out;
}

Matrix ConditionalDeltaScore::score_vjp(const Matrix& x, double t, const Matrix& v) const {
  check_dim(x, schedule_, "ConditionalDeltaScore");
  check_same_shape(x, v, "ConditionalDeltaScore::score_vjp");
  const auto ev = schedule::eval(schedule_, t);
  require_positive_gamma(ev, "ConditionalDeltaScore");
  Matrix out(v.rows(), v.cols());
  for (std::size_t b = 0; b < v.rows(); ++b)
    for (std::size_t j = 0; j < v.cols(); ++j) out(b, j) = -v(b, j) / ev.gamma[j];
  return out;
}

double ConditionalDeltaScore::min_time() const { return std::numeric_limits<double>::min(); }

EmpiricalScore::EmpiricalScore(schedule::InflationSchedule s, Matrix data)
    : schedule_(std::move(s)), data_(std::move(data)) {
  detail::require(data_.rows() >= 1, "EmpiricalScore: empty dataset");
  check_dim(data_, schedule_, "EmpiricalScore");
}

Matrix EmpiricalScore::posterior_mean(const Matrix& x, double t) const {
  check_dim(x, schedule_, "EmpiricalScore");
  const auto ev = schedule::eval(schedule_, t);
  require_positive_gamma(ev, "EmpiricalScore");
  const std::size_t d = x.cols();
  const std::size_t n = data_.rows();
  Matrix out(x.rows(), d);
  parallel_for(x.rows(), [&](std::size_t b) {
    const auto xb = x.row(b);
    Vector logw(n);
    double max_logw = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      const auto yi = data_.row(i);
      double q = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = xb[j] - yi[j];
        q += diff * diff / ev.gamma[j];
      }
      logw[i] = -0.5 * q;
      max_logw = std::max(max_logw, logw[i]);
    }
    double total = 0.0;
    Vector acc(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double w = std::exp(logw[i] - max_logw);
      total += w;
      const auto yi = data_.row(i);
      for (std::size_t j = 0; j < d; ++j) acc[j] += w * yi[j];
    }
    for (std::size_t j = 0; j < d; ++j) out(b, j) = acc[j] / total;
  });
  return out;
}

Matrix EmpiricalScore::score(const Matrix& x, double t) const {
  const Matrix mean = posterior_mean(x, t);
  const auto ev = schedule::eval(schedule_, t);
  Matrix out(x.rows(), x.cols());
  for (std::size_t b = 0; b < x.rows(); ++b)
    for (std::size_t j = 0; j < x.cols(); ++j) out(b, j) = (mean(b, j) - x(b, j)) / ev.gamma[j];
  return out;
}

// ∂s_j/∂x_k = (Cov_w(y)_jk / γ_k - δ_jk) / γ_j, with Cov_w the posterior covariance.
Matrix EmpiricalScore::score_vjp(const Matrix& x, double t, const Matrix& v) const {
  check_dim(x, schedule_, "EmpiricalScore");
  check_same_shape(x, v, "EmpiricalScore::score_vjp");
  const auto ev = schedule::eval(schedule_, t);
  require_positive_gamma(ev, "EmpiricalScore");
  const std::size_t d = x.cols();
  const std::size_t n = data_.rows();
  Matrix out(x.rows(), d);
  parallel_for(x.rows(), [&](std::size_t b) {
    const auto xb = x.row(b);
    Vector logw(n);
    double max_logw = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      double q = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = xb[j] - data_(i, j);
        q += diff * diff / ev.gamma[j];
      }
      logw[i] = -0.5 * q;
      max_logw = std::max(max_logw, logw[i]);
    }
    Vector w(n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += (w[i] = std::exp(logw[i] - max_logw));
    Vector mean(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) mean[j] += w[i] / total * data_(i, j);
    Vector u(d);
    for (std::size_t j = 0; j < d; ++j) u[j] = v(b, j) / ev.gamma[j];
    // Cov u = Σ_i w_i (y_i - mean) ((y_i - mean) · u)
    Vector cov_u(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double proj = 0.0;
      for (std::size_t j = 0; j < d; ++j) proj += (data_(i, j) - mean[j]) * u[j];
      const double c = w[i] / total * proj;
      for (std::size_t j = 0; j < d; ++j) cov_u[j] += c * (data_(i, j) - mean[j]);
    }
    for (std::size_t k = 0; k < d; ++k) out(b, k) = cov_u[k] / ev.gamma[k] - u[k];
  });
  return out;
}

double EmpiricalScore::min_time() const { return std::numeric_limits<double>::min(); }

NetworkScore::NetworkScore(std::shared_ptr<const denoiser::TrainedDenoiser> model, bool use_ema,
                           double time_floor)
    : model_(std::move(model)), use_ema_(use_ema), time_floor_(time_floor) {
  detail::require(model_ != nullptr, "NetworkScore: null model");
  detail::require(time_floor_ >= 0.0 && time_floor_ < model_->schedule.t_max(),
                  "NetworkScore: time floor must lie in [0, t_max)");
}

double NetworkScore::effective_time(double t) const { return std::max(t, time_floor_); }

double NetworkScore::min_time() const {
  return time_floor_ >= model_->config.t_min ? 0.0 : model_->config.t_min;
}

Matrix NetworkScore::score(const Matrix& x, double t) const {
  return score_from_denoiser(*model_, x, effective_time(t), use_ema_);
}

Matrix NetworkScore::score_vjp(const Matrix& x, double t, const Matrix& v) const {
  check_same_shape(x, v, "NetworkScore::score_vjp");
  const double te = effective_time(t);
  const auto ev = schedule::eval(model_->schedule, te);
  Matrix u(v.rows(), v.cols());
  for (std::size_t b = 0; b < v.rows(); ++b)
    for (std::size_t j = 0; j < v.cols(); ++j) u(b, j) = v(b, j) / ev.gamma[j];
  Matrix out = denoiser::input_vjp(*model_, x, te, u, use_ema_);
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] -= u.data()[i];
  return out;
}

Matrix oracle_score(const Matrix& x, double t, const schedule::InflationSchedule& s) {
  check_dim(x, s, "oracle_score");
  const auto ev = schedule::eval(s, t);
  Matrix out(x.rows(), x.cols());
  for (std::size_t b = 0; b < x.rows(); ++b)
    for (std::size_t j = 0; j < x.cols(); ++j) out(b, j) = -x(b, j) / ev.sigma2[j];
  return out;
}

Matrix score_from_denoiser(const denoiser::TrainedDenoiser& model, const Matrix& x, double t,
                           bool use_ema) {
  const Matrix den = denoiser::forward(model, x, t, use_ema);
  const auto ev = schedule::eval(model.schedule, t);
  Matrix out(x.rows(), x.cols());
  for (std::size_t b = 0; b < x.rows(); ++b)
    for (std::size_t j = 0; j < x.cols(); ++j) out(b, j) = (den(b, j) - x(b, j)) / ev.gamma[j];
  return out;
}

Matrix rhs(const Matrix& x_tilde, double t, const schedule::InflationSchedule& s,
           const ScoreSource& source) {
  check_dim(x_tilde, s, "rhs");
  const auto ev = schedule::eval(s, t);
  const std::size_t d = s.dim();
  Matrix x(x_tilde.rows(), d);
  for (std::size_t b = 0; b < x.rows(); ++b)
    for (std::size_t j = 0; j < d; ++j) x(b, j) = x_tilde(b, j) / ev.alpha[j];
  const Matrix sc = source.score(x, t);
  Matrix out(x.rows(), d);
  for (std::size_t b = 0; b < x.rows(); ++b)
    for (std::size_t j = 0; j < d; ++j) {
      const double drift = ev.alpha_dot[j] / ev.alpha[j] * x_tilde(b, j);
      out(b, j) = ev.gamma_dot[j] == 0.0 ? drift
                                         : -0.5 * ev.alpha[j] * ev.gamma_dot[j] * sc(b, j) + drift;
    }
  return out;
}

Matrix rhs_vjp(const Matrix& x_tilde, double t, const schedule::InflationSchedule& s,
               const ScoreSource& source, const Matrix& v) {
  check_dim(x_tilde, s, "rhs_vjp");
  check_same_shape(x_tilde, v, "rhs_vjp");
  const auto ev = schedule::eval(s, t);
  const std::size_t d = s.dim();
  Matrix x(x_tilde.rows(), d);
  Matrix u(x_tilde.rows(), d);
  for (std::size_t b = 0; b < x.rows(); ++b)
    for (std::size_t j = 0; j < d; ++j) {
      x(b, j) = x_tilde(b, j) / ev.alpha[j];
      u(b, j) = -0.5 * ev.alpha[j] * ev.gamma_dot[j] * v(b, j);
    }
  const Matrix w = source.score_vjp(x, t, u);
  Matrix out(x.rows(), d);
  for (std::size_t b = 0; b < x.rows(); ++b)
    for (std::size_t k = 0; k < d; ++k)
      out(b, k) = w(b, k) / ev.alpha[k] + ev.alpha_dot[k] / ev.alpha[k] * v(b, k);
  return out;
}

Matrix karras_isotropic_rhs(const Matrix& x_tilde, double t, const schedule::InflationSchedule& s,
                            const ScoreSource& source) {
  check_dim(x_tilde, s, "karras_isotropic_rhs");
  const double g0 = s.g().front();
  for (double gj : s.g())
    detail::require(gj == g0, "karras_isotropic_rhs: schedule must be isotropic");
  detail::require(t > 0.0, "karras_isotropic_rhs: needs t > 0 (c = 0 at t = 0)");
  const auto ev = schedule::eval(s, t);
  const double alpha = ev.alpha[0];
  const double c = std::sqrt(ev.gamma[0]);
  const double c_dot = ev.gamma_dot[0] / (2.0 * c);
  Matrix x(x_tilde.rows(), x_tilde.cols());
  for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] = x_tilde.data()[i] / alpha;
  const Matrix sc = source.score(x, t);
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data()[i] = -alpha * c * c_dot * sc.data()[i] + ev.alpha_dot[0] / alpha * x_tilde.data()[i];
  return out;
}

Matrix conditional_vf(const Matrix& x, double t, std::span<const double> x1,
                      const schedule::InflationSchedule& s) {
  check_dim(x, s, "conditional_vf");
  detail::require(x1.size() == s.dim(), "conditional_vf: x1 dimension mismatch");
  detail::require(t > 0.0, "conditional_vf: Sigma_t is singular at t = 0");
  const auto ev = schedule::eval(s, t);
  Matrix out(x.rows(), x.cols());
  for (std::size_t b = 0; b < x.rows(); ++b)
    for (std::size_t j = 0; j < x.cols(); ++j) {
      const double a = ev.alpha[j];
      const double a_dot = ev.alpha_dot[j];
      // σ = α sqrt(γ):  σ̇/σ = α̇/α + γ̇/(2γ)
      const double sigma_rate = a_dot / a + 0.5 * ev.gamma_dot[j] / ev.gamma[j];
      out(b, j) = sigma_rate * (x(b, j) - a * x1[j]) + a_dot * x1[j];
    }
  return out;
}

std::string_view to_string(GridKind k) { return k == GridKind::uniform ? "uniform" : "edm"; }
std::string_view to_string(Solver s) { return s == Solver::euler ? "euler" : "heun"; }
std::string_view to_string(Direction d) { return d == Direction::inflate ? "inflate" : "generate"; }

Solver parse_solver(std::string_view name) {
  if (name == "euler") return Solver::euler;
  if (name == "heun") return Solver::heun;
  throw InvalidArgument("unknown solver '" + std::string(name) + "' (expected euler|heun)");
}

Direction parse_direction(std::string_view name) {
  if (name == "inflate") return Direction::inflate;
  if (name == "generate") return Direction::generate;
  throw InvalidArgument("unknown direction '" + std::string(name) + "' (expected inflate|generate)");
}

GridKind parse_grid(std::string_view name) {
  if (name == "uniform") return GridKind::uniform;
  if (name == "edm") return GridKind::edm;
  throw InvalidArgument("unknown grid '" + std::string(name) + "' (expected uniform|edm)");
}

Discretization uniform_grid(double t_max, double h) {
  detail::require(std::isfinite(h) && h > 0.0, "uniform_grid: step h must be positive");
  detail::require(std::isfinite(t_max) && t_max > 0.0, "uniform_grid: t_max must be positive");
  const double ratio = t_max / h;
  auto n = static_cast<std::size_t>(std::llround(ratio));
  if (std::abs(ratio - static_cast<double>(n)) > 1e-9 * std::max(1.0, ratio))
    n = static_cast<std::size_t>(std::ceil(ratio));
  detail::require(n >= 1, "uniform_grid: need at least one step");
  Discretization disc{GridKind::uniform, {}};
  disc.times.reserve(n + 1);
  for (std::size_t i = 0; i < n; ++i) disc.times.push_back(static_cast<double>(i) * h);
  disc.times.push_back(t_max);
  return disc;
}

Discretization edm_grid(std::size_t n, double eps_s, double t_max) {
  detail::require(n >= 2, "edm_grid: need N >= 2");
  detail::require(eps_s >= 0.0 && eps_s < t_max, "edm_grid: need 0 <= eps_s < t_max");
  Discretization disc{GridKind::edm, std::vector<double>(n)};
  for (std::size_t i = 0; i < n; ++i)
    disc.times[i] = static_cast<double>(i) / static_cast<double>(n - 1) * (t_max - eps_s) + eps_s;
  disc.times.back() = t_max;
  return disc;
}

Trajectory integrate(const Matrix& x_tilde, const Discretization& disc, Direction direction,
                     Solver solver, const schedule::InflationSchedule& s, const ScoreSource& source,
                     bool keep_trajectory) {
  check_dim(x_tilde, s, "integrate");
  detail::require(disc.times.size() >= 2, "integrate: grid needs at least two times");
  for (std::size_t i = 1; i < disc.times.size(); ++i)
    detail::require(disc.times[i] > disc.times[i - 1], "integrate: grid must be strictly increasing");
  detail::require(disc.times.front() >= 0.0 && disc.times.back() <= s.t_max(),
                  "integrate: grid must lie within [0, t_max]");
  detail::require(x_tilde.all_finite(), "integrate: non-finite initial state");

  const std::vector<double> times = ordered_times(disc, direction);
  const std::size_t n = x_tilde.rows();
  const std::size_t n_chunks = std::max<std::size_t>(1, (n + kChunkRows - 1) / kChunkRows);
  std::vector<std::vector<Matrix>> chunk_states(n_chunks);

  parallel_for(n_chunks, [&](std::size_t c) {
    const std::size_t begin = c * kChunkRows;
    const std::size_t rows = std::min(kChunkRows, n - begin);
    Matrix x = slice_rows(x_tilde, begin, rows);
    auto& states = chunk_states[c];
    if (keep_trajectory) states.push_back(x);
    for (std::size_t i = 0; i + 1 < times.size(); ++i) {
      const double ta = times[i];
      const double tb = times[i + 1];
      const double h = tb - ta;
      const Matrix k1 = rhs(x, ta, s, source);
      Matrix xp = axpy(x, h, k1);
      if (solver == Solver::heun && !skip_corrector(tb, source)) {
        const Matrix k2 = rhs(xp, tb, s, source);
        for (std::size_t q = 0; q < x.size(); ++q)
          x.data()[q] += 0.5 * h * (k1.data()[q] + k2.data()[q]);
      } else {
        x = std::move(xp);
      }
      check_finite_state(x, i + 1, tb);
      if (keep_trajectory) states.push_back(x);
    }
    if (!keep_trajectory) states.push_back(std::move(x));
  });

  Trajectory traj;
  traj.direction = direction;
  traj.times = keep_trajectory ? times : std::vector<double>{times.front(), times.back()};
  const std::size_t n_states = keep_trajectory ? times.size() : 1;
  std::vector<Matrix> merged(n_states, Matrix(n, s.dim()));
  for (std::size_t c = 0; c < n_chunks && n > 0; ++c)
    for (std::size_t k = 0; k < n_states; ++k) place_rows(merged[k], c * kChunkRows, chunk_states[c][k]);
  traj.final_state = merged.back();
  if (keep_trajectory) {
    traj.states = std::move(merged);
  } else {
    traj.states = {x_tilde, traj.final_state};
  }
  return traj;
}

UnrolledFlow::UnrolledFlow(schedule::InflationSchedule s, std::shared_ptr<const ScoreSource> source,
                           Discretization disc, Solver solver, Direction direction)
    : schedule_(std::move(s)),
      source_(std::move(source)),
      disc_(std::move(disc)),
      solver_(solver),
      direction_(direction) {
  detail::require(source_ != nullptr, "UnrolledFlow: null score source");
  detail::require(disc_.times.size() >= 2, "UnrolledFlow: grid needs at least two times");
}

Matrix UnrolledFlow::apply(const Matrix& x) const {
  return integrate(x, disc_, direction_, solver_, schedule_, *source_).final_state;
}

Matrix UnrolledFlow::apply_vjp(const Matrix& x, const Matrix& cotangent, Matrix& grad) const {
  check_same_shape(x, cotangent, "UnrolledFlow::apply_vjp");
  return apply_vjp(
      x, [&](const Matrix& out, std::size_t begin) { return slice_rows(cotangent, begin, out.rows()); },
      grad);
}

Matrix UnrolledFlow::apply_vjp(const Matrix& x, const CotangentFn& cotangent, Matrix& grad) const {
  check_dim(x, schedule_, "UnrolledFlow");
  const std::vector<double> times = ordered_times(disc_, direction_);
  const std::size_t n = x.rows();
  const std::size_t n_chunks = std::max<std::size_t>(1, (n + kChunkRows - 1) / kChunkRows);
  Matrix out(n, x.cols());
  grad = Matrix(n, x.cols());
  const ScoreSource& src = *source_;

  parallel_for(n_chunks, [&](std::size_t c) {
    const std::size_t begin = c * kChunkRows;
    const std::size_t rows = std::min(kChunkRows, n - begin);
    if (rows == 0) return;
    std::vector<Matrix> xs;
    std::vector<Matrix> k1s;
    xs.reserve(times.size());
    Matrix cur = slice_rows(x, begin, rows);
    for (std::size_t i = 0; i + 1 < times.size(); ++i) {
      const double h = times[i + 1] - times[i];
      xs.push_back(cur);
      Matrix k1 = rhs(cur, times[i], schedule_, src);
      Matrix xp = axpy(cur, h, k1);
      if (solver_ == Solver::heun && !skip_corrector(times[i + 1], src)) {
        const Matrix k2 = rhs(xp, times[i + 1], schedule_, src);
        for (std::size_t q = 0; q < cur.size(); ++q)
          cur.data()[q] += 0.5 * h * (k1.data()[q] + k2.data()[q]);
      } else {
        cur = std::move(xp);
      }
      check_finite_state(cur, i + 1, times[i + 1]);
      k1s.push_back(std::move(k1));
    }
    place_rows(out, begin, cur);

    Matrix g = cotangent(cur, begin);
    check_same_shape(cur, g, "UnrolledFlow::apply_vjp cotangent");
    for (std::size_t i = times.size() - 1; i-- > 0;) {
      const double h = times[i + 1] - times[i];
      const Matrix& xi = xs[i];
      if (solver_ == Solver::heun && !skip_corrector(times[i + 1], src)) {
        const Matrix xp = axpy(xi, h, k1s[i]);
        Matrix half_g = g;
        for (double& v : half_g.data()) v *= 0.5 * h;
        const Matrix gp = rhs_vjp(xp, times[i + 1], schedule_, src, half_g);
        Matrix gk1 = half_g;
        for (std::size_t q = 0; q < gk1.size(); ++q) gk1.data()[q] += h * gp.data()[q];
        const Matrix gx = rhs_vjp(xi, times[i], schedule_, src, gk1);
        for (std::size_t q = 0; q < g.size(); ++q) g.data()[q] += gp.data()[q] + gx.data()[q];
      } else {
        Matrix hg = g;
        for (double& v : hg.data()) v *= h;
        const Matrix gx = rhs_vjp(xi, times[i], schedule_, src, hg);
        for (std::size_t q = 0; q < g.size(); ++q) g.data()[q] += gx.data()[q];
      }
    }
    place_rows(grad, begin, g);
  });
  return out;
}

std::vector<std::filesystem::path> write_trajectory_csv(const std::filesystem::path& dir,
                                                        const std::string& stem,
                                                        const Trajectory& traj) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  Matrix times(traj.times.size(), 1, traj.times);
  const auto times_path = dir / (stem + "_times.csv");
  datasets::write_csv(times_path, times);
  written.push_back(times_path);
  for (std::size_t k = 0; k < traj.states.size(); ++k) {
    const auto p = dir / (stem + "_" + std::to_string(k) + ".csv");
    datasets::write_csv(p, traj.states[k]);
    written.push_back(p);
  }
  return written;
}

}  // namespace inflare::pfode
