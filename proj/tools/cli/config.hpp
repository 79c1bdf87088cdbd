#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "inflare/boundary.hpp"
#include "inflare/datasets.hpp"
#include "inflare/denoiser.hpp"
#include "inflare/hmc.hpp"
#include "inflare/pfode.hpp"
#include "inflare/schedule.hpp"

namespace inflare::cli {

// Bad flags, unknown config keys or invalid values: exit code 2.
class UsageError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

using Json = nlohmann::json;

// Every accepted key with its default. Files and overrides may only set keys
// present here, with a compatible type.
Json default_config();

// Merges `overlay` into `base`, rejecting unknown keys and type changes.
void merge_strict(Json& base, const Json& overlay, const std::string& where);

// TOML (by extension .toml) or JSON file converted to a JSON tree.
Json read_config_file(const std::filesystem::path& path);

// "section.key=value"; value parsed as JSON when possible, otherwise taken as a string.
void apply_assignment(Json& tree, const std::string& assignment);

// FNV-1a 64 of the compact dump without output.dir, as 16 hex digits.
std::string config_hash(const Json& tree);

// Default seed: INFLARE_SEED if set, else 0.
std::uint64_t env_seed();

struct RunConfig {
  Json tree;

  std::uint64_t seed() const;
  std::filesystem::path out_dir() const;
  bool svg() const;

  datasets::DatasetSpec dataset() const;
  std::size_t oracle_dim() const;
  schedule::InflationSchedule schedule(std::size_t d) const;
  denoiser::TrainConfig train() const;
  denoiser::DenoiserNet net(std::size_t d) const;
  pfode::Solver solver() const;
  pfode::Direction direction() const;
  pfode::Discretization grid(double t_max) const;
  double time_floor() const;
  boundary::CoverageConfig coverage() const;
  hmc::HmcConfig hmc(schedule::ScheduleKind kind) const;

  // Checks every section can be turned into its typed form; throws UsageError.
  void validate() const;
};

RunConfig resolve_config(const std::optional<std::filesystem::path>& file,
                         const std::vector<std::string>& assignments, const Json& flag_overrides);

}  // namespace inflare::cli
