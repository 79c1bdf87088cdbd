#include "config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#define TOML_EXCEPTIONS 1
#include <toml.hpp>

#include "inflare/error.hpp"

namespace inflare::cli {

namespace {

void check_compatible(const Json& base, const Json& value, const std::string& key) {
  auto bad = [&](const char* expected) {
    throw UsageError("config key '" + key + "' expects " + expected + ", got " + value.dump());
  };
  if (base.is_null()) {
    if (!value.is_null() && !value.is_number()) bad("a number or null");
    return;
  }
  if (base.is_boolean()) {
    if (!value.is_boolean()) bad("a boolean");
  } else if (base.is_number_unsigned()) {
    if (!value.is_number_integer() || value.get<std::int64_t>() < 0)
      bad("a non-negative integer");
  } else if (base.is_number_integer()) {
    if (!value.is_number_integer()) bad("an integer");
  } else if (base.is_number_float()) {
    if (!value.is_number()) bad("a number");
  } else if (base.is_string()) {
    if (!value.is_string()) bad("a string");
  } else if (base.is_array()) {
    if (!value.is_array()) bad("an array");
    for (const auto& e : value)
      if (!e.is_number()) bad("an array of numbers");
  }
}

Json parse_scalar(const std::string& text) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error&) {
    return Json(text);
  }
}

std::string join(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

void merge_at(Json& base, const Json& overlay, const std::string& prefix, const std::string& where) {
  if (!overlay.is_object()) throw UsageError(where + ": expected a table at '" + prefix + "'");
  for (const auto& [key, value] : overlay.items()) {
    const std::string full = join(prefix, key);
    if (!base.contains(key)) throw UsageError(where + ": unknown config key '" + full + "'");
    Json& slot = base[key];
    if (slot.is_object()) {
      merge_at(slot, value, full, where);
      continue;
    }
    check_compatible(slot, value, full);
    slot = slot.is_number_float() ? Json(value.get<double>()) : value;
  }
}

template <class T>
T get(const Json& tree, const char* section, const char* key) {
  try {
    return tree.at(section).at(key).get<T>();
  } catch (const Json::exception& e) {
    throw UsageError(std::string("config key '") + section + "." + key + "': " + e.what());
  }
}

}  // namespace

std::uint64_t env_seed() {
  const char* env = std::getenv("INFLARE_SEED");
  if (!env || !*env) return 0;
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(env, &used);
    if (used != std::string(env).size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw UsageError(std::string("INFLARE_SEED is not a non-negative integer: '") + env + "'");
  }
}

Json default_config() {
  return Json{
      {"seed", env_seed()},
      {"output", {{"dir", "inflare_out"}, {"svg", true}}},
      {"dataset", {{"kind", "circles"}, {"n", 10000u}, {"noise_sd", 0.05}, {"thickness_sd", 0.7071067811865476}}},
      {"schedule",
       {{"kind", "prp"},
        {"rho", nullptr},
        {"t_max", 7.01},
        {"preserved", 1u},
        {"gap", 1.02},
        {"g_preserved", schedule::kDefaultGPreserved},
        {"d", 2u}}},
      {"train",
       {{"learning_rate", 1e-3},
        {"batch_size", 512u},
        {"steps", 20000u},
        {"ema_half_life", 5e5},
        {"t_min", denoiser::kDefaultTMin},
        {"noise_levels", denoiser::kNoiseLevels},
        {"log_every", 100u},
        {"hidden", {128u, 128u, 128u}},
        {"embed_dim", 64u},
        {"use_ema", true}}},
      {"flow",
       {{"solver", "euler"},
        {"grid", "uniform"},
        {"h", 1e-2},
        {"n_steps", 118u},
        {"eps_s", 1e-2},
        {"direction", "inflate"},
        {"time_floor", pfode::kDefaultTimeFloor},
        {"n", 2000u}}},
      {"roundtrip", {{"n_test", 2000u}}},
      {"coverage",
       {{"radii", {0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5}},
        {"n_test", 20000u},
        {"n_boundary", boundary::kDefaultBoundaryPoints},
        {"solver", "heun"}}},
      {"hmc",
       {{"n_obs", 200u},
        {"gen_steps", 32u},
        {"eps_s", 1e-2},
        {"solver", "heun"},
        {"samples", 300u},
        {"burn_in", 500u},
        {"thin", 5u},
        {"leapfrog", 15u},
        {"step_size", nullptr},
        {"noise_var", hmc::kObservationNoiseVar},
        {"init", "truth"}}},
      {"acf", {{"n_traj", 200u}, {"max_lag", 100u}, {"min_lag", 10u}}},
  };
}

void merge_strict(Json& base, const Json& overlay, const std::string& where) {
  merge_at(base, overlay, "", where);
}

Json read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  if (path.extension() == ".json") {
    try {
      return Json::parse(buf.str());
    } catch (const Json::parse_error& e) {
      throw UsageError("config " + path.string() + ": " + e.what());
    }
  }
  try {
    const toml::table table = toml::parse(buf.str(), path.string());
    std::stringstream js;
    js << toml::json_formatter{table};
    return Json::parse(js.str());
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << "config " << path.string() << ": " << e.description() << " at line "
        << e.source().begin.line;
    throw UsageError(msg.str());
  }
}

void apply_assignment(Json& tree, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw UsageError("--set expects section.key=value, got '" + assignment + "'");
  const std::string path = assignment.substr(0, eq);
  Json overlay = parse_scalar(assignment.substr(eq + 1));
  std::vector<std::string> parts;
  std::size_t start = 0;
  for (std::size_t dot; (dot = path.find('.', start)) != std::string::npos; start = dot + 1)
    parts.push_back(path.substr(start, dot - start));
  parts.push_back(path.substr(start));
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) overlay = Json{{*it, overlay}};
  merge_strict(tree, overlay, "--set " + path);
}

std::string config_hash(const Json& tree) {
  Json keyed = tree;
  if (keyed.contains("output")) keyed["output"].erase("dir");
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : keyed.dump()) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::uint64_t RunConfig::seed() const { return tree.at("seed").get<std::uint64_t>(); }

std::filesystem::path RunConfig::out_dir() const { return get<std::string>(tree, "output", "dir"); }

bool RunConfig::svg() const { return get<bool>(tree, "output", "svg"); }

datasets::DatasetSpec RunConfig::dataset() const {
  datasets::DatasetSpec spec;
  try {
    spec.kind = datasets::parse_kind(get<std::string>(tree, "dataset", "kind"));
  } catch (const InvalidArgument& e) {
    throw UsageError(e.what());
  }
  spec.n = get<std::size_t>(tree, "dataset", "n");
  spec.noise_sd = get<double>(tree, "dataset", "noise_sd");
  spec.thickness_sd = get<double>(tree, "dataset", "thickness_sd");
  spec.seed = seed();
  if (spec.n == 0) throw UsageError("dataset.n must be positive");
  if (!(spec.noise_sd >= 0.0)) throw UsageError("dataset.noise_sd must be >= 0");
  if (!(spec.thickness_sd > 0.0)) throw UsageError("dataset.thickness_sd must be positive");
  return spec;
}

std::size_t RunConfig::oracle_dim() const { return get<std::size_t>(tree, "schedule", "d"); }

schedule::InflationSchedule RunConfig::schedule(std::size_t d) const {
  try {
    const auto kind = schedule::parse_schedule_kind(get<std::string>(tree, "schedule", "kind"));
    const Json& rho_j = tree.at("schedule").at("rho");
    const double t_max = get<double>(tree, "schedule", "t_max");
    if (kind == schedule::ScheduleKind::prp)
      return schedule::InflationSchedule::prp(
          d, t_max, rho_j.is_null() ? schedule::kDefaultRhoPrp : rho_j.get<double>());
    return schedule::InflationSchedule::prr(
        d, get<std::size_t>(tree, "schedule", "preserved"), get<double>(tree, "schedule", "gap"), t_max,
        rho_j.is_null() ? schedule::kDefaultRhoPrr : rho_j.get<double>(),
        get<double>(tree, "schedule", "g_preserved"));
  } catch (const InvalidArgument& e) {
    throw UsageError(e.what());
  } catch (const NumericalError& e) {
    throw UsageError(e.what());
  }
}

denoiser::TrainConfig RunConfig::train() const {
  denoiser::TrainConfig c;
  c.learning_rate = get<double>(tree, "train", "learning_rate");
  c.batch_size = get<std::size_t>(tree, "train", "batch_size");
  c.steps = get<std::size_t>(tree, "train", "steps");
  c.ema_half_life = get<double>(tree, "train", "ema_half_life");
  c.t_min = get<double>(tree, "train", "t_min");
  c.noise_levels = get<double>(tree, "train", "noise_levels");
  c.log_every = get<std::size_t>(tree, "train", "log_every");
  c.seed = seed() + 1;
  return c;
}

denoiser::DenoiserNet RunConfig::net(std::size_t d) const {
  try {
    return denoiser::DenoiserNet(d, get<std::vector<std::size_t>>(tree, "train", "hidden"),
                                 get<std::size_t>(tree, "train", "embed_dim"));
  } catch (const InvalidArgument& e) {
    throw UsageError(e.what());
  }
}

pfode::Solver RunConfig::solver() const {
  try {
    return pfode::parse_solver(get<std::string>(tree, "flow", "solver"));
  } catch (const InvalidArgument& e) {
    throw UsageError(e.what());
  }
}

pfode::Direction RunConfig::direction() const {
  try {
    return pfode::parse_direction(get<std::string>(tree, "flow", "direction"));
  } catch (const InvalidArgument& e) {
    throw UsageError(e.what());
  }
}

pfode::Discretization RunConfig::grid(double t_max) const {
  try {
    const auto kind = pfode::parse_grid(get<std::string>(tree, "flow", "grid"));
    if (kind == pfode::GridKind::uniform) return pfode::uniform_grid(t_max, get<double>(tree, "flow", "h"));
    return pfode::edm_grid(get<std::size_t>(tree, "flow", "n_steps") + 1, get<double>(tree, "flow", "eps_s"),
                           t_max);
  } catch (const InvalidArgument& e) {
    throw UsageError(e.what());
  }
}

double RunConfig::time_floor() const { return get<double>(tree, "flow", "time_floor"); }

boundary::CoverageConfig RunConfig::coverage() const {
  boundary::CoverageConfig c;
  c.radii = get<std::vector<double>>(tree, "coverage", "radii");
  c.n_test = get<std::size_t>(tree, "coverage", "n_test");
  c.n_boundary = get<std::size_t>(tree, "coverage", "n_boundary");
  try {
    c.solver = pfode::parse_solver(get<std::string>(tree, "coverage", "solver"));
  } catch (const InvalidArgument& e) {
    throw UsageError(e.what());
  }
  c.seed = seed() + 3;
  if (c.radii.empty()) throw UsageError("coverage.radii must not be empty");
  for (double r : c.radii)
    if (!(r > 0.0)) throw UsageError("coverage.radii must be positive");
  if (c.n_test == 0) throw UsageError("coverage.n_test must be positive");
  return c;
}

hmc::HmcConfig RunConfig::hmc(schedule::ScheduleKind kind) const {
  hmc::HmcConfig c;
  c.leapfrog_steps = get<std::size_t>(tree, "hmc", "leapfrog");
  const Json& step = tree.at("hmc").at("step_size");
  c.step_size = step.is_null() ? hmc::HmcConfig::default_step(kind) : step.get<double>();
  c.samples = get<std::size_t>(tree, "hmc", "samples");
  c.burn_in = get<std::size_t>(tree, "hmc", "burn_in");
  c.thin = get<std::size_t>(tree, "hmc", "thin");
  c.seed = seed() + 5;
  try {
    c.validate();
  } catch (const InvalidArgument& e) {
    throw UsageError(e.what());
  }
  return c;
}

void RunConfig::validate() const {
  (void)seed();
  (void)out_dir();
  (void)svg();
  (void)dataset();
  const std::size_t d = oracle_dim();
  if (d < 1) throw UsageError("schedule.d must be positive");
  const auto s = schedule(d);
  const auto tc = train();
  try {
    tc.validate(s.t_max());
  } catch (const InvalidArgument& e) {
    throw UsageError(e.what());
  }
  (void)net(d);
  (void)solver();
  (void)direction();
  (void)grid(s.t_max());
  const double floor = time_floor();
  if (!(floor >= 0.0 && floor < s.t_max())) throw UsageError("flow.time_floor must lie in [0, t_max)");
  if (get<std::size_t>(tree, "flow", "n") == 0) throw UsageError("flow.n must be positive");
  if (get<std::size_t>(tree, "roundtrip", "n_test") == 0) throw UsageError("roundtrip.n_test must be positive");
  (void)coverage();
  (void)hmc(s.kind());
  if (get<std::size_t>(tree, "hmc", "n_obs") == 0) throw UsageError("hmc.n_obs must be positive");
  if (get<std::size_t>(tree, "hmc", "gen_steps") == 0) throw UsageError("hmc.gen_steps must be positive");
  if (!(get<double>(tree, "hmc", "noise_var") > 0.0)) throw UsageError("hmc.noise_var must be positive");
  try {
    (void)pfode::parse_solver(get<std::string>(tree, "hmc", "solver"));
  } catch (const InvalidArgument& e) {
    throw UsageError(e.what());
  }
  if (const auto init = get<std::string>(tree, "hmc", "init"); init != "truth" && init != "neutral")
    throw UsageError("hmc.init must be truth or neutral, got " + init);
  if (get<std::size_t>(tree, "acf", "n_traj") < 2) throw UsageError("acf.n_traj must be >= 2");
}

RunConfig resolve_config(const std::optional<std::filesystem::path>& file,
                         const std::vector<std::string>& assignments, const Json& flag_overrides) {
  Json tree = default_config();
  if (file) merge_strict(tree, read_config_file(*file), file->string());
  for (const auto& a : assignments) apply_assignment(tree, a);
  if (!flag_overrides.is_null()) merge_strict(tree, flag_overrides, "command-line flags");
  RunConfig cfg{std::move(tree)};
  cfg.validate();
  return cfg;
}

}  // namespace inflare::cli
