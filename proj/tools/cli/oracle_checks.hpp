#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace inflare::cli {

struct CheckResult {
  std::string name;
  double error = 0.0;  // worst deviation observed
  double tolerance = 0.0;
  bool passed() const noexcept { return error <= tolerance; }
};

// Closed-form invariants of the schedules, preconditioner and flow field.
std::vector<CheckResult> run_oracle_checks(std::uint64_t seed);

}  // namespace inflare::cli
