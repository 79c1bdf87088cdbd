#pragma once

#include <cstdint>
#include <random>
#include <span>

#include "inflare/linalg.hpp"

namespace inflare {

// Seeded random stream. Identical seeds give identical streams within one
// build; substream(i) derives an independent stream without consuming state.
// Single-owner: give each concurrent consumer its own substream.
class RngStream {
public:
  explicit RngStream(std::uint64_t seed);

  std::uint64_t seed() const noexcept { return seed_; }
  RngStream substream(std::uint64_t index) const;

  double uniform();                       // [0, 1)
  double uniform(double lo, double hi);   // [lo, hi)
  double normal();                        // N(0, 1)
  std::uint64_t next_u64();
  std::size_t index(std::size_t n);       // uniform on {0, ..., n-1}

  void fill_normal(std::span<double> out);

private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> unit_{0.0, 1.0};
};

// mean + sqrt(var) ⊙ z, z ~ N(0, I). Throws on negative or non-finite variance.
Vector sample_diag_gaussian(RngStream& rng, std::span<const double> mean,
                            std::span<const double> var_diag);

// One row per sample, same kernel for every row.
Matrix sample_diag_gaussian(RngStream& rng, std::size_t n, std::span<const double> mean,
                            std::span<const double> var_diag);

std::uint64_t splitmix64(std::uint64_t x) noexcept;

}  // namespace inflare
