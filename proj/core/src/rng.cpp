#include "inflare/rng.hpp"

#include <cmath>

#include "inflare/error.hpp"

namespace inflare {

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

RngStream::RngStream(std::uint64_t seed) : seed_(seed), engine_(splitmix64(seed)) {}

RngStream RngStream::substream(std::uint64_t index) const {
  return RngStream(splitmix64(seed_ ^ splitmix64(index + 0xA5A5A5A5ULL)));
}

double RngStream::uniform() { return unit_(engine_); }

double RngStream::uniform(double lo, double hi) { return lo + (hi - lo) * unit_(engine_); }

double RngStream::normal() { return normal_(engine_); }

std::uint64_t RngStream::next_u64() { return engine_(); }

std::size_t RngStream::index(std::size_t n) {
  detail::require(n > 0, "RngStream::index: empty range");
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
}

void RngStream::fill_normal(std::span<double> out) {
  for (double& v : out) v = normal_(engine_);
}

namespace {
void check_kernel(std::span<const double> mean, std::span<const double> var) {
  detail::require(mean.size() == var.size(), "sample_diag_gaussian: mean/var length mismatch");
  for (double v : var) {
    if (!std::isfinite(v)) throw InvalidArgument("sample_diag_gaussian: non-finite variance");
    if (v < 0.0) throw InvalidArgument("sample_diag_gaussian: negative variance");
  }
}
}  // namespace

Vector sample_diag_gaussian(RngStream& rng, std::span<const double> mean,
                            std::span<const double> var_diag) {
  check_kernel(mean, var_diag);
  Vector out(mean.size());
  for (std::size_t i = 0; i < mean.size(); ++i)
    out[i] = mean[i] + std::sqrt(var_diag[i]) * rng.normal();
  return out;
}

Matrix sample_diag_gaussian(RngStream& rng, std::size_t n, std::span<const double> mean,
                            std::span<const double> var_diag) {
  check_kernel(mean, var_diag);
  Matrix out(n, mean.size());
  for (std::size_t r = 0; r < n; ++r) {
    auto row = out.row(r);
    for (std::size_t i = 0; i < mean.size(); ++i)
      row[i] = mean[i] + std::sqrt(var_diag[i]) * rng.normal();
  }
  return out;
}

}  // namespace inflare
