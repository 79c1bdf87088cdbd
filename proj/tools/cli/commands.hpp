#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "config.hpp"

namespace inflare::cli {

// Output directory bookkeeping for one subcommand run.
class Session {
public:
  Session(std::string command, RunConfig config, std::vector<std::string> argv);

  const RunConfig& config() const noexcept { return config_; }
  const std::string& command() const noexcept { return command_; }

  // Path inside the output directory, recorded as an artifact.
  std::filesystem::path artifact(const std::string& name);
  void metric(const std::string& name, double value);

  // metrics.json, manifest.json and config.json.
  void finish() const;

private:
  std::string command_;
  RunConfig config_;
  std::vector<std::string> argv_;
  std::filesystem::path dir_;
  Json metrics_ = Json::object();
  std::vector<std::string> artifacts_;
};

struct Inputs {
  std::optional<std::filesystem::path> data;
  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::filesystem::path> input;
  bool oracle = false;
  bool keep_trajectory = false;
  bool verbose = false;
  std::vector<double> eigvals;
};

void gen_data(Session& s, const Inputs& in);
void train(Session& s, const Inputs& in);
void flow(Session& s, const Inputs& in);
void roundtrip(Session& s, const Inputs& in);
void coverage(Session& s, const Inputs& in);
void hmc(Session& s, const Inputs& in);
void pr(Session& s, const Inputs& in, std::ostream& out);
void residual_acf(Session& s, const Inputs& in);
// Returns false if any check failed.
bool oracle_check(Session& s, std::ostream& out);

}  // namespace inflare::cli
