#include "app.hpp"

#include <filesystem>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "commands.hpp"
#include "inflare/error.hpp"

namespace inflare::cli {

namespace {

// Options shared by every subcommand.
struct Common {
  std::optional<std::filesystem::path> config;
  std::vector<std::string> assignments;
  std::optional<std::string> out_dir;
  std::optional<std::uint64_t> seed;
  bool no_svg = false;
};

// Dedicated flags; each one set on the command line lands in the config tree.
struct Flags {
  std::optional<std::string> dataset, schedule, solver, grid, direction;
  std::optional<std::size_t> n, steps, batch_size;
  std::optional<double> t_max, h, noise_sd;
};

Json overlay(const Common& c, const Flags& f) {
  Json o = Json::object();
  auto put = [&](const char* section, const char* key, const auto& v) {
    if (v) o[section][key] = *v;
  };
  if (c.out_dir) o["output"]["dir"] = *c.out_dir;
  if (c.no_svg) o["output"]["svg"] = false;
  if (c.seed) o["seed"] = *c.seed;
  put("dataset", "kind", f.dataset);
  put("dataset", "n", f.n);
  put("dataset", "noise_sd", f.noise_sd);
  put("schedule", "kind", f.schedule);
  put("schedule", "t_max", f.t_max);
  put("train", "steps", f.steps);
  put("train", "batch_size", f.batch_size);
  put("flow", "solver", f.solver);
  put("flow", "grid", f.grid);
  put("flow", "h", f.h);
  put("flow", "direction", f.direction);
  return o;
}

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("-c,--config", c.config, "TOML or JSON config file");
  sub->add_option("--set", c.assignments, "Override a config key: section.key=value")->take_all();
  sub->add_option("-o,--out", c.out_dir, "Output directory");
  sub->add_option("--seed", c.seed, "Root seed (default: INFLARE_SEED or 0)");
  sub->add_flag("--no-svg", c.no_svg, "Skip SVG plots");
}

void add_model_source(CLI::App* sub, Inputs& in) {
  sub->add_option("--checkpoint", in.checkpoint, "Trained model (.iflow)")->check(CLI::ExistingFile);
  sub->add_flag("--oracle", in.oracle, "Use the analytic Gaussian score");
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"Inflationary flows: dimension-aware deterministic diffusion toys", "inflare"};
  app.require_subcommand(1, 1);
  app.set_version_flag("--version", INFLARE_VERSION);

  Common common;
  Flags flags;
  Inputs in;

  auto* gen = app.add_subcommand("gen-data", "Generate a standardized toy dataset");
  gen->add_option("dataset", flags.dataset, "Dataset kind");
  gen->add_option("--n", flags.n, "Number of points");
  gen->add_option("--noise-sd", flags.noise_sd, "Isotropic jitter sd");

  auto* tr = app.add_subcommand("train", "Train a denoiser");
  tr->add_option("--data", in.data, "Standardized data CSV (default: generate from config)")
      ->check(CLI::ExistingFile);
  tr->add_option("--dataset", flags.dataset, "Dataset kind when generating");
  tr->add_option("--schedule", flags.schedule, "prp or prr");
  tr->add_option("--t-max", flags.t_max, "Integration horizon");
  tr->add_option("--steps", flags.steps, "Optimizer steps");
  tr->add_option("--batch-size", flags.batch_size, "Batch size");

  auto* fl = app.add_subcommand("flow", "Integrate the pfODE in one direction");
  add_model_source(fl, in);
  fl->add_option("--direction", flags.direction, "inflate or generate");
  fl->add_option("--input", in.input, "Input CSV (data for inflate, latents for generate)")
      ->check(CLI::ExistingFile);
  fl->add_flag("--keep-trajectory", in.keep_trajectory, "Write every intermediate state");

  auto* rt = app.add_subcommand("roundtrip", "Inflate then generate held-out points");
  add_model_source(rt, in);
  rt->add_option("--data", in.data, "Held-out standardized CSV")->check(CLI::ExistingFile);

  auto* cov = app.add_subcommand("coverage", "Transport ball boundaries and compare coverage");
  add_model_source(cov, in);

  auto* hm = app.add_subcommand("hmc", "Sample mixture weights through the generator");
  add_model_source(hm, in);

  auto* prc = app.add_subcommand("pr", "Participation ratio");
  prc->add_option("--eigvals", in.eigvals, "Comma-separated eigenvalues")->delimiter(',');
  prc->add_option("--data", in.data, "CSV whose sample covariance is used")->check(CLI::ExistingFile);

  auto* acf = app.add_subcommand("residual-acf", "Autocorrelation of denoiser residuals along inflation");
  acf->add_option("--checkpoint", in.checkpoint, "Trained model (.iflow)")->check(CLI::ExistingFile);
  acf->add_option("--data", in.data, "Training data CSV (default: regenerate from config)")
      ->check(CLI::ExistingFile);

  auto* orc = app.add_subcommand("oracle-check", "Analytic invariant suite");

  for (auto* sub : {gen, tr, fl, rt, cov, hm, prc, acf, orc}) add_common(sub, common);
  for (auto* sub : {tr, fl, rt, cov, hm}) sub->add_flag("-v,--verbose", in.verbose, "Progress on stderr");
  for (auto* sub : {fl, rt, cov, acf}) {
    sub->add_option("--solver", flags.solver, "euler or heun");
    sub->add_option("--grid", flags.grid, "uniform or edm");
    sub->add_option("--step", flags.h, "Uniform grid step");
  }
  for (auto* sub : {fl, rt, cov, hm}) sub->add_option("--schedule", flags.schedule, "prp or prr (oracle runs)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  CLI::App* sub = app.get_subcommands().front();
  const std::string name = sub->get_name();
  try {
    auto cfg = resolve_config(common.config, common.assignments, overlay(common, flags));
    Session session(name, std::move(cfg), std::vector<std::string>(argv, argv + argc));
    int code = 0;
    if (sub == gen) gen_data(session, in);
    else if (sub == tr) train(session, in);
    else if (sub == fl) flow(session, in);
    else if (sub == rt) roundtrip(session, in);
    else if (sub == cov) coverage(session, in);
    else if (sub == hm) hmc(session, in);
    else if (sub == prc) pr(session, in, std::cout);
    else if (sub == acf) residual_acf(session, in);
    else if (sub == orc) code = oracle_check(session, std::cout) ? 0 : 1;
    session.finish();
    if (code != 0) std::cerr << "inflare " << name << ": one or more checks failed\n";
    return code;
  } catch (const UsageError& e) {
    std::cerr << "inflare " << name << ": usage error: " << e.what() << '\n';
    return 2;
  } catch (const InvalidArgument& e) {
    std::cerr << "inflare " << name << ": invalid argument: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "inflare " << name << ": error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace inflare::cli
