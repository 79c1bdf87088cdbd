#pragma once

#include <span>
#include <string>
#include <vector>

#include "inflare/denoiser.hpp"
#include "inflare/linalg.hpp"
#include "inflare/pfode.hpp"

namespace inflare::analysis {

// (Σλ)² / Σλ². Throws if no eigenvalue is positive.
double participation_ratio(std::span<const double> eigvals);
// tr(Σ)² / tr(Σ²) straight from a symmetric covariance.
double participation_ratio_cov(const Matrix& cov);

// Mean over rows of the per-row mean squared coordinate error.
double roundtrip_mse(const Matrix& original, const Matrix& reconstructed);

struct AcfReport {
  std::vector<std::size_t> lags;  // in grid steps
  std::vector<double> lag_times;
  std::vector<double> values;     // mean scaled correlation per lag

  // Mean |values| over lags strictly greater than `min_lag`.
  double mean_abs_beyond(std::size_t min_lag) const;
};

// residuals[k] is the N x d residual slice at time index k. For each lag L the
// per-dimension Pearson correlation between slices k and k + L is averaged
// over k and over dimensions. Zero-variance slices are an error.
AcfReport residual_autocorrelation(const std::vector<Matrix>& residuals,
                                   std::span<const double> times, std::size_t max_lag);

// Inflates `start` (whitened data rows) with the network score, then collects
// residuals D_θ(x(t), t) - D_ref(x(t), t) along the retained trajectory, where
// D_ref is the ideal denoiser of the empirical training set. Times below the
// network score's floor are evaluated at the floor.
AcfReport residual_autocorrelation(const std::shared_ptr<const denoiser::TrainedDenoiser>& model,
                                   const Matrix& train_whitened, const Matrix& start,
                                   const pfode::Discretization& disc, std::size_t max_lag,
                                   double time_floor = pfode::kDefaultTimeFloor);

std::string to_json(const AcfReport& report);

}  // namespace inflare::analysis
