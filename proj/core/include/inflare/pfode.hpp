#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <string_view>
#include <vector>

#include "inflare/denoiser.hpp"
#include "inflare/linalg.hpp"
#include "inflare/schedule.hpp"

namespace inflare::pfode {

// Score ∇_x log p_t(x) of the smoothed density, rows of x whitened and unscaled.
class ScoreSource {
public:
  virtual ~ScoreSource() = default;

  virtual Matrix score(const Matrix& x, double t) const = 0;
  // Rows are (∂s/∂x)ᵀ v for the matching rows of x.
  virtual Matrix score_vjp(const Matrix& x, double t, const Matrix& v) const = 0;
  // The score is singular at t = 0 when this is positive.
  virtual double min_time() const { return 0.0; }
};

// Whitened standard-normal data: s = -x / (1 + gamma).
class OracleGaussian final : public ScoreSource {
public:
  explicit OracleGaussian(schedule::InflationSchedule s) : schedule_(std::move(s)) {}
  Matrix score(const Matrix& x, double t) const override;
  Matrix score_vjp(const Matrix& x, double t, const Matrix& v) const override;

private:
  schedule::InflationSchedule schedule_;
};

// Delta dataset at x1: s = -(x - x1) / gamma.
class ConditionalDeltaScore final : public ScoreSource {
public:
  ConditionalDeltaScore(schedule::InflationSchedule s, Vector x1);
  Matrix score(const Matrix& x, double t) const override;
  Matrix score_vjp(const Matrix& x, double t, const Matrix& v) const override;
  double min_time() const override;

private:
  schedule::InflationSchedule schedule_;
  Vector x1_;
};

// Exact score of the empirical training distribution smoothed by N(0, diag gamma):
// the ideal denoiser is the softmax-weighted mean of the training points.
class EmpiricalScore final : public ScoreSource {
public:
  EmpiricalScore(schedule::InflationSchedule s, Matrix data);
  Matrix posterior_mean(const Matrix& x, double t) const;
  Matrix score(const Matrix& x, double t) const override;
  Matrix score_vjp(const Matrix& x, double t, const Matrix& v) const override;
  double min_time() const override;

private:
  schedule::InflationSchedule schedule_;
  Matrix data_;
};

inline constexpr double kDefaultTimeFloor = 1e-2;

// s = (D(x, t') - x) / gamma(t') with t' = max(t, time_floor).
class NetworkScore final : public ScoreSource {
public:
  explicit NetworkScore(std::shared_ptr<const denoiser::TrainedDenoiser> model, bool use_ema = true,
                        double time_floor = kDefaultTimeFloor);
  Matrix score(const Matrix& x, double t) const override;
  Matrix score_vjp(const Matrix& x, double t, const Matrix& v) const override;
  double min_time() const override;
  const denoiser::TrainedDenoiser& model() const noexcept { return *model_; }

private:
  double effective_time(double t) const;

  std::shared_ptr<const denoiser::TrainedDenoiser> model_;
  bool use_ema_;
  double time_floor_;
};

Matrix oracle_score(const Matrix& x, double t, const schedule::InflationSchedule& s);
Matrix score_from_denoiser(const denoiser::TrainedDenoiser& model, const Matrix& x, double t,
                           bool use_ema = true);

// dx̃/dt = -1/2 α ⊙ γ̇ ⊙ s(x̃/α, t) + (α̇/α) ⊙ x̃. The score term is dropped on axes with γ̇ = 0.
Matrix rhs(const Matrix& x_tilde, double t, const schedule::InflationSchedule& s,
           const ScoreSource& source);
// Rows are (∂rhs/∂x̃)ᵀ v.
Matrix rhs_vjp(const Matrix& x_tilde, double t, const schedule::InflationSchedule& s,
               const ScoreSource& source, const Matrix& v);

// -α c ċ s(x̃/α) + (α̇/α) x̃ with c = sqrt(gamma); requires a uniform-rate schedule and t > 0.
Matrix karras_isotropic_rhs(const Matrix& x_tilde, double t, const schedule::InflationSchedule& s,
                            const ScoreSource& source);

// Field of the Gaussian path μ = α x1, σ = α sqrt(gamma) evaluated at x (rows); t > 0.
Matrix conditional_vf(const Matrix& x, double t, std::span<const double> x1,
                      const schedule::InflationSchedule& s);

enum class GridKind { uniform, edm };
enum class Solver { euler, heun };
enum class Direction { inflate, generate };

std::string_view to_string(GridKind k);
std::string_view to_string(Solver s);
std::string_view to_string(Direction d);
Solver parse_solver(std::string_view name);
Direction parse_direction(std::string_view name);
GridKind parse_grid(std::string_view name);

struct Discretization {
  GridKind kind = GridKind::uniform;
  std::vector<double> times;  // strictly increasing

  std::size_t steps() const noexcept { return times.empty() ? 0 : times.size() - 1; }
};

// 0, h, 2h, ..., t_max (final step shortened if t_max is not a multiple of h).
Discretization uniform_grid(double t_max, double h);
// t_i = i/(N-1) (t_max - eps_s) + eps_s.
Discretization edm_grid(std::size_t n, double eps_s, double t_max);

struct Trajectory {
  std::vector<double> times;   // in traversal order
  std::vector<Matrix> states;  // one N x d matrix per retained time
  Direction direction = Direction::inflate;
  Matrix final_state;
};

// Integrates the batch (rows of x̃) over the grid, forwards for inflate and
// reversed for generate. Rows are integrated in fixed 128-row chunks so the
// result does not depend on the worker count.
Trajectory integrate(const Matrix& x_tilde, const Discretization& disc, Direction direction,
                     Solver solver, const schedule::InflationSchedule& s, const ScoreSource& source,
                     bool keep_trajectory = false);

// Generation map G(z) through the unrolled integrator, with exact reverse-mode
// gradients of the discretized map.
class UnrolledFlow {
public:
  UnrolledFlow(schedule::InflationSchedule s, std::shared_ptr<const ScoreSource> source,
               Discretization disc, Solver solver, Direction direction = Direction::generate);

  // Cotangent rows for the output rows [row_begin, row_begin + out.rows()).
  using CotangentFn = std::function<Matrix(const Matrix& out, std::size_t row_begin)>;

  Matrix apply(const Matrix& x) const;
  // Returns G(x) and, in `grad`, rows (∂G/∂x)ᵀ cotangent.
  Matrix apply_vjp(const Matrix& x, const Matrix& cotangent, Matrix& grad) const;
  // Same, with the cotangent computed from the forward output in one pass.
  Matrix apply_vjp(const Matrix& x, const CotangentFn& cotangent, Matrix& grad) const;

  const schedule::InflationSchedule& schedule() const noexcept { return schedule_; }
  const ScoreSource& source() const noexcept { return *source_; }
  const Discretization& discretization() const noexcept { return disc_; }
  Direction direction() const noexcept { return direction_; }

private:
  schedule::InflationSchedule schedule_;
  std::shared_ptr<const ScoreSource> source_;
  Discretization disc_;
  Solver solver_;
  Direction direction_;
};

// One CSV per retained time: <stem>_<index>.csv with columns x0.., plus <stem>_times.csv.
std::vector<std::filesystem::path> write_trajectory_csv(const std::filesystem::path& dir,
                                                        const std::string& stem,
                                                        const Trajectory& traj);

}  // namespace inflare::pfode
