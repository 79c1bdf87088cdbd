#include "inflare/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>

#include "inflare/error.hpp"

namespace inflare::analysis {

double participation_ratio(std::span<const double> eigvals) {
  detail::require(!eigvals.empty(), "participation_ratio: empty spectrum");
  double s1 = 0.0;
  double s2 = 0.0;
  bool any_positive = false;
  for (double v : eigvals) {
    detail::require(std::isfinite(v), "participation_ratio: non-finite eigenvalue");
    any_positive = any_positive || v > 0.0;
    s1 += v;
    s2 += v * v;
  }
  detail::require(any_positive, "participation_ratio: spectrum has no positive eigenvalue");
  return s1 * s1 / s2;
}

double participation_ratio_cov(const Matrix& cov) {
  detail::require(cov.rows() == cov.cols() && cov.rows() > 0,
                  "participation_ratio_cov: covariance must be square");
  double trace = 0.0;
  double trace_sq = 0.0;  // tr(Σ²) = Σ_ij Σ_ij Σ_ji
  for (std::size_t i = 0; i < cov.rows(); ++i) {
    trace += cov(i, i);
    for (std::size_t j = 0; j < cov.cols(); ++j) trace_sq += cov(i, j) * cov(j, i);
  }
  detail::require(trace > 0.0 && trace_sq > 0.0,
                  "participation_ratio_cov: covariance has no positive variance");
  return trace * trace / trace_sq;
}

double roundtrip_mse(const Matrix& original, const Matrix& reconstructed) {
  detail::require(original.rows() == reconstructed.rows() && original.cols() == reconstructed.cols(),
                  "roundtrip_mse: shape mismatch");
  detail::require(!original.empty(), "roundtrip_mse: empty input");
  double total = 0.0;
  for (std::size_t i = 0; i < original.size(); ++i) {
    const double e = original.data()[i] - reconstructed.data()[i];
    total += e * e;
  }
  return total / static_cast<double>(original.size());
}

double AcfReport::mean_abs_beyond(std::size_t min_lag) const {
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t k = 0; k < lags.size(); ++k)
    if (lags[k] > min_lag) {
      sum += std::abs(values[k]);
      ++count;
    }
  detail::require(count > 0, "AcfReport: no lags beyond the requested minimum");
  return sum / static_cast<double>(count);
}

AcfReport residual_autocorrelation(const std::vector<Matrix>& residuals,
                                   std::span<const double> times, std::size_t max_lag) {
  detail::require(residuals.size() >= 2, "residual_autocorrelation: need at least two time slices");
  detail::require(times.size() == residuals.size(), "residual_autocorrelation: one time per slice");
  const std::size_t n = residuals.front().rows();
  const std::size_t d = residuals.front().cols();
  detail::require(n >= 2, "residual_autocorrelation: need at least two trajectories");
  for (const auto& r : residuals)
    detail::require(r.rows() == n && r.cols() == d, "residual_autocorrelation: ragged slices");
  max_lag = std::min(max_lag, residuals.size() - 1);

  // Standardize every (time, dim) column once.
  std::vector<Matrix> z(residuals.size(), Matrix(n, d));
  for (std::size_t k = 0; k < residuals.size(); ++k)
    for (std::size_t j = 0; j < d; ++j) {
      double mean = 0.0;
      for (std::size_t b = 0; b < n; ++b) mean += residuals[k](b, j);
      mean /= static_cast<double>(n);
      double var = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const double c = residuals[k](b, j) - mean;
        var += c * c;
      }
      var /= static_cast<double>(n);
      if (!(var > 0.0))
        throw NumericalError("residual_autocorrelation: zero residual variance at time index " +
                             std::to_string(k) + ", dimension " + std::to_string(j));
      const double inv_sd = 1.0 / std::sqrt(var);
      for (std::size_t b = 0; b < n; ++b) z[k](b, j) = (residuals[k](b, j) - mean) * inv_sd;
    }

  AcfReport report;
  const double dt = times.size() > 1 ? (times.back() - times.front()) / static_cast<double>(times.size() - 1) : 0.0;
  for (std::size_t lag = 0; lag <= max_lag; ++lag) {
    double acc = 0.0;
    const std::size_t pairs = residuals.size() - lag;
    for (std::size_t k = 0; k < pairs; ++k)
      for (std::size_t j = 0; j < d; ++j) {
        double c = 0.0;
        for (std::size_t b = 0; b < n; ++b) c += z[k](b, j) * z[k + lag](b, j);
        acc += c / static_cast<double>(n);
      }
    report.lags.push_back(lag);
    report.lag_times.push_back(std::abs(dt) * static_cast<double>(lag));
    report.values.push_back(acc / static_cast<double>(pairs * d));
  }
  return report;
}

AcfReport residual_autocorrelation(const std::shared_ptr<const denoiser::TrainedDenoiser>& model,
                                   const Matrix& train_whitened, const Matrix& start,
                                   const pfode::Discretization& disc, std::size_t max_lag,
                                   double time_floor) {
  detail::require(model != nullptr, "residual_autocorrelation: null model");
  const auto& s = model->schedule;
  const pfode::NetworkScore net_score(model, true, time_floor);
  const pfode::EmpiricalScore ideal(s, train_whitened);
  const pfode::Trajectory traj = pfode::integrate(start, disc, pfode::Direction::inflate,
                                                  pfode::Solver::euler, s, net_score, true);
  std::vector<Matrix> residuals;
  residuals.reserve(traj.states.size());
  for (std::size_t k = 0; k < traj.states.size(); ++k) {
    const double te = std::max(traj.times[k], time_floor);
    const auto ev = schedule::eval(s, traj.times[k]);
    Matrix x = traj.states[k];
    for (std::size_t b = 0; b < x.rows(); ++b)
      for (std::size_t j = 0; j < x.cols(); ++j) x(b, j) /= ev.alpha[j];
    Matrix r = denoiser::forward(*model, x, te);
    const Matrix ref = ideal.posterior_mean(x, te);
    for (std::size_t i = 0; i < r.size(); ++i) r.data()[i] -= ref.data()[i];
    residuals.push_back(std::move(r));
  }
  return residual_autocorrelation(residuals, traj.times, max_lag);
}

std::string to_json(const AcfReport& report) {
  nlohmann::json j = {{"lags", report.lags}, {"lag_times", report.lag_times}, {"values", report.values}};
  return j.dump(2);
}

}  // namespace inflare::analysis
