#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <memory>

#include <CLI11.hpp>
#include <toml.hpp>

#include "inflare/analysis.hpp"
#include "inflare/boundary.hpp"
#include "inflare/checkpoint.hpp"
#include "inflare/datasets.hpp"
#include "inflare/error.hpp"
#include "inflare/hmc.hpp"
#include "inflare/pfode.hpp"
#include "oracle_checks.hpp"
#include "svg.hpp"

#ifndef INFLARE_VERSION
#define INFLARE_VERSION "unknown"
#endif

namespace inflare::cli {

namespace fs = std::filesystem;
using denoiser::TrainedDenoiser;

Session::Session(std::string command, RunConfig config, std::vector<std::string> argv)
    : command_(std::move(command)), config_(std::move(config)), argv_(std::move(argv)),
      dir_(config_.out_dir()) {
  fs::create_directories(dir_);
}

fs::path Session::artifact(const std::string& name) {
  fs::path p = dir_ / name;
  artifacts_.push_back(p.string());
  return p;
}

void Session::metric(const std::string& name, double value) { metrics_[name] = value; }

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text << '\n';
}

std::string compiler_id() {
#if defined(__clang__)
  return std::string("clang ") + __clang_version__;
#elif defined(__GNUC__)
  return std::string("gcc ") + __VERSION__;
#else
  return "unknown";
#endif
}

}  // namespace

void Session::finish() const {
  const std::string hash = config_hash(config_.tree);
  const Json metrics = {{"command", command_},
                        {"config_hash", hash},
                        {"seed", config_.seed()},
                        {"metrics", metrics_},
                        {"artifacts", artifacts_}};
  write_text(dir_ / "metrics.json", metrics.dump(2));
  const Json versions = {
      {"inflare", INFLARE_VERSION},
      {"compiler", compiler_id()},
      {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                            std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                            std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
      {"cli11", CLI11_VERSION},
      {"tomlplusplus", std::to_string(TOML_LIB_MAJOR) + "." + std::to_string(TOML_LIB_MINOR) + "." +
                           std::to_string(TOML_LIB_PATCH)},
  };
  const Json manifest = {{"command", command_}, {"argv", argv_},       {"config_hash", hash},
                         {"seed", config_.seed()}, {"versions", versions}, {"config", config_.tree}};
  write_text(dir_ / "manifest.json", manifest.dump(2));
  write_text(dir_ / "config.json", config_.tree.dump(2));
}

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};

void maybe_scatter(Session& s, const std::string& name, const std::string& title,
                   std::vector<svg::Series> series) {
  if (!s.config().svg()) return;
  for (std::size_t i = 0; i < series.size(); ++i)
    if (series[i].color == svg::Series{}.color) series[i].color = kPalette[i % 4];
  svg::scatter(s.artifact(name), title, series);
}

std::shared_ptr<const TrainedDenoiser> load_model(const fs::path& path) {
  return std::make_shared<const TrainedDenoiser>(checkpoint::load(path));
}

// Score source plus the schedule it belongs to; checkpoints carry their own
// schedule and eigenframe, oracle runs use the configured schedule in whitened space.
struct FlowSetup {
  schedule::InflationSchedule schedule;
  std::shared_ptr<const pfode::ScoreSource> source;
  std::shared_ptr<const TrainedDenoiser> model;
};

FlowSetup flow_setup(const Session& s, const Inputs& in) {
  if (in.oracle == in.checkpoint.has_value())
    throw UsageError("exactly one of --checkpoint or --oracle is required");
  const RunConfig& cfg = s.config();
  if (in.oracle) {
    auto sched = cfg.schedule(cfg.oracle_dim());
    auto source = std::make_shared<const pfode::OracleGaussian>(sched);
    return {std::move(sched), std::move(source), nullptr};
  }
  auto model = load_model(*in.checkpoint);
  const bool ema = cfg.tree.at("train").at("use_ema").get<bool>();
  auto source = std::make_shared<const pfode::NetworkScore>(model, ema, cfg.time_floor());
  return {model->schedule, std::move(source), model};
}

// Standardized data rows to the whitened frame of the flow (identity for oracles).
Matrix to_flow_space(const FlowSetup& f, const Matrix& data) {
  if (!f.model) return data;
  detail::require(data.cols() == f.model->frame.dim(), "input has " + std::to_string(data.cols()) +
                                                           " columns, model expects " +
                                                           std::to_string(f.model->frame.dim()));
  return datasets::whiten(data, f.model->frame);
}

Matrix from_flow_space(const FlowSetup& f, const Matrix& whitened) {
  return f.model ? datasets::unwhiten(whitened, f.model->frame) : whitened;
}

datasets::Standardization make_dataset(const RunConfig& cfg, std::uint64_t seed, std::size_t n) {
  auto spec = cfg.dataset();
  spec.seed = seed;
  spec.n = n;
  return datasets::standardize(datasets::generate(spec));
}

Matrix read_points(const fs::path& path) {
  Matrix m = datasets::read_csv(path);
  if (m.rows() == 0) throw InvalidArgument(path.string() + " has no data rows");
  return m;
}

void record_checkpoint_shape(Session& s, const TrainedDenoiser& m) {
  s.metric("data_dim", static_cast<double>(m.net.data_dim()));
  s.metric("parameter_count", static_cast<double>(m.net.parameter_count()));
}

}  // namespace

void gen_data(Session& s, const Inputs&) {
  const auto& cfg = s.config();
  const auto spec = cfg.dataset();
  const auto st = datasets::standardize(datasets::generate(spec));
  datasets::write_csv(s.artifact("data.csv"), st.cloud.points);
  s.metric("n", static_cast<double>(st.cloud.size()));
  s.metric("dim", static_cast<double>(st.cloud.dim()));
  const auto frame = datasets::estimate_eigenframe(st.cloud);
  for (std::size_t j = 0; j < frame.dim(); ++j)
    s.metric("eigval_" + std::to_string(j), frame.sigma0_sq[j]);
  s.metric("participation_ratio", analysis::participation_ratio(frame.sigma0_sq));
  maybe_scatter(s, "data.svg", st.cloud.name, {{st.cloud.points}});
}

void train(Session& s, const Inputs& in) {
  const auto& cfg = s.config();
  datasets::PointCloud cloud;
  if (in.data) {
    cloud.name = in.data->stem().string();
    cloud.points = read_points(*in.data);
  } else {
    cloud = make_dataset(cfg, cfg.seed(), cfg.dataset().n).cloud;
    datasets::write_csv(s.artifact("data.csv"), cloud.points);
  }
  const auto frame = datasets::estimate_eigenframe(cloud);
  const Matrix whitened = datasets::whiten(cloud.points, frame);
  const auto sched = cfg.schedule(cloud.dim());
  const auto tc = cfg.train();
  tc.validate(sched.t_max());
  denoiser::ProgressFn progress;
  if (in.verbose)
    progress = [](std::size_t step, double loss) { std::cerr << "step " << step << " loss " << loss << '\n'; };
  const auto model = denoiser::train(whitened, sched, frame, tc, cfg.net(cloud.dim()), progress);
  checkpoint::save(s.artifact("model.iflow"), model);

  const auto& curve = model.meta.loss_curve;
  {
    std::ofstream out(s.artifact("loss_curve.csv"));
    out << "step,loss\n";
    for (std::size_t i = 0; i < curve.size(); ++i)
      out << std::min((i + 1) * tc.log_every, model.meta.steps_done) << ','
          << datasets::format_double(curve[i]) << '\n';
  }
  if (cfg.svg()) svg::line(s.artifact("loss_curve.svg"), "training loss", curve);
  record_checkpoint_shape(s, model);
  s.metric("steps", static_cast<double>(model.meta.steps_done));
  if (!curve.empty()) s.metric("final_loss", curve.back());
  s.metric("eigvals_floored", static_cast<double>(frame.floored));
}

void flow(Session& s, const Inputs& in) {
  const auto& cfg = s.config();
  const auto f = flow_setup(s, in);
  const auto dir = cfg.direction();
  const auto disc = cfg.grid(f.schedule.t_max());
  const std::size_t d = f.schedule.dim();

  Matrix start;
  if (in.input) {
    start = read_points(*in.input);
    if (dir == pfode::Direction::inflate) start = to_flow_space(f, start);
    detail::require(start.cols() == d, "input dimension does not match the schedule");
  } else if (dir == pfode::Direction::generate) {
    RngStream rng = RngStream(cfg.seed()).substream(7);
    const std::size_t n = cfg.tree.at("flow").at("n").get<std::size_t>();
    start = sample_diag_gaussian(rng, n, Vector(d, 0.0), schedule::latent_cov(f.schedule));
  } else {
    throw UsageError("flow --direction inflate needs --input");
  }

  const auto traj = pfode::integrate(start, disc, dir, cfg.solver(), f.schedule, *f.source, in.keep_trajectory);
  if (in.keep_trajectory)
    for (const auto& p : pfode::write_trajectory_csv(s.config().out_dir(), "trajectory", traj))
      s.artifact(p.filename().string());

  if (dir == pfode::Direction::inflate) {
    datasets::write_csv(s.artifact("latents.csv"), traj.final_state);
    maybe_scatter(s, "latents.svg", "inflated latents", {{traj.final_state}});
  } else {
    const Matrix data = from_flow_space(f, traj.final_state);
    datasets::write_csv(s.artifact("generated.csv"), data);
    maybe_scatter(s, "generated.svg", "generated samples", {{data}});
  }
  s.metric("n", static_cast<double>(start.rows()));
  s.metric("steps", static_cast<double>(disc.steps()));
  s.metric("final_max_abs", [&] {
    double m = 0.0;
    for (double v : traj.final_state.storage()) m = std::max(m, std::abs(v));
    return m;
  }());
}

void roundtrip(Session& s, const Inputs& in) {
  const auto& cfg = s.config();
  const auto f = flow_setup(s, in);
  Matrix held;
  if (in.data) {
    held = read_points(*in.data);
  } else if (f.model) {
    held = make_dataset(cfg, cfg.seed() + 2, cfg.tree.at("roundtrip").at("n_test").get<std::size_t>())
               .cloud.points;
  } else {
    RngStream rng = RngStream(cfg.seed() + 2).substream(0);
    const std::size_t d = f.schedule.dim();
    held = sample_diag_gaussian(rng, cfg.tree.at("roundtrip").at("n_test").get<std::size_t>(),
                                Vector(d, 0.0), Vector(d, 1.0));
  }
  const Matrix x0 = to_flow_space(f, held);
  const auto disc = cfg.grid(f.schedule.t_max());
  const auto solver = cfg.solver();
  const auto up = pfode::integrate(x0, disc, pfode::Direction::inflate, solver, f.schedule, *f.source);
  const auto down =
      pfode::integrate(up.final_state, disc, pfode::Direction::generate, solver, f.schedule, *f.source);

  datasets::write_csv(s.artifact("heldout_whitened.csv"), x0);
  datasets::write_csv(s.artifact("latents.csv"), up.final_state);
  datasets::write_csv(s.artifact("reconstructed_whitened.csv"), down.final_state);
  maybe_scatter(s, "roundtrip.svg", "held-out (blue) and reconstructed (red)",
                {{x0}, {down.final_state, "#d62728", 0.8}});
  s.metric("roundtrip_mse", analysis::roundtrip_mse(x0, down.final_state));
  s.metric("roundtrip_max_abs", max_abs_diff(x0, down.final_state));
  s.metric("n", static_cast<double>(x0.rows()));
  s.metric("steps", static_cast<double>(disc.steps()));
}

void coverage(Session& s, const Inputs& in) {
  const auto& cfg = s.config();
  const auto f = flow_setup(s, in);
  const auto disc = cfg.grid(f.schedule.t_max());
  const auto reports = boundary::coverage_experiment(*f.source, f.schedule, disc, cfg.coverage());
  write_text(s.artifact("coverage.json"), boundary::to_json(reports));
  {
    std::ofstream out(s.artifact("coverage.csv"));
    out << "radius,direction,frac_before,frac_after,change,topology_ok\n";
    for (const auto& r : reports)
      out << datasets::format_double(r.radius) << ',' << pfode::to_string(r.direction) << ','
          << datasets::format_double(r.frac_before) << ',' << datasets::format_double(r.frac_after) << ','
          << datasets::format_double(r.change()) << ',' << (r.topology_ok ? 1 : 0) << '\n';
  }
  double worst = 0.0;
  bool topology = true;
  for (const auto& r : reports) {
    worst = std::max(worst, std::abs(r.change()));
    topology = topology && r.topology_ok;
    s.metric("change_" + std::string(pfode::to_string(r.direction)) + "_r" + datasets::format_double(r.radius),
             r.change());
  }
  s.metric("max_abs_change", worst);
  s.metric("topology_ok", topology ? 1.0 : 0.0);
}

void hmc(Session& s, const Inputs& in) {
  const auto& cfg = s.config();
  const auto f = flow_setup(s, in);
  detail::require(f.schedule.dim() == 2, "hmc runs on 2D latents");
  const Json& h = cfg.tree.at("hmc");
  const auto disc = pfode::edm_grid(h.at("gen_steps").get<std::size_t>() + 1, h.at("eps_s").get<double>(),
                                    f.schedule.t_max());
  const hmc::Generator gen(f.schedule, f.source, disc, pfode::parse_solver(h.at("solver").get<std::string>()));
  const auto prior = hmc::GmmPrior::for_schedule(f.schedule.kind());
  RngStream obs_rng = RngStream(cfg.seed() + 4).substream(0);
  const auto obs = hmc::synthesize_observations(prior, h.at("n_obs").get<std::size_t>(), gen, obs_rng,
                                                h.at("noise_var").get<double>());
  datasets::write_csv(s.artifact("observations.csv"), obs.x_obs);

  const auto hc = cfg.hmc(f.schedule.kind());
  // "truth" starts at the synthesizing latents and weights; "neutral" at z = 0, uniform weights.
  const Vector init = h.at("init").get<std::string>() == "truth"
                          ? hmc::pack(obs.z_true, prior.weights)
                          : hmc::pack(Matrix(obs.x_obs.rows(), 2, 0.0), {1.0 / 3, 1.0 / 3, 1.0 / 3});
  const hmc::Target target = [&](std::span<const double> q, std::span<double> grad) {
    return hmc::log_posterior_and_grad(q, grad, obs, prior, gen);
  };
  hmc::HmcProgress progress;
  if (in.verbose)
    progress = [](std::size_t it, std::size_t total, double acc) {
      if (it % 50 == 0) std::cerr << "hmc " << it << '/' << total << " acceptance " << acc << '\n';
    };
  const auto chain = hmc::hmc_run(hc, init, target, progress);
  hmc::write_chain_csv(s.artifact("chain.csv"), chain);
  const auto summary = hmc::summarize(chain);
  write_text(s.artifact("summary.json"), hmc::summary_json(summary));

  bool inside = true;
  for (std::size_t k = 0; k < hmc::kComponents; ++k) {
    const std::string idx = std::to_string(k);
    s.metric("w" + idx + "_mean", summary.mean[k]);
    s.metric("w" + idx + "_sd", summary.sd[k]);
    s.metric("w" + idx + "_q025", summary.q025[k]);
    s.metric("w" + idx + "_q975", summary.q975[k]);
    s.metric("w" + idx + "_true", prior.weights[k]);
    inside = inside && summary.q025[k] <= prior.weights[k] && prior.weights[k] <= summary.q975[k];
  }
  s.metric("acceptance_rate", summary.acceptance_rate);
  s.metric("samples", static_cast<double>(summary.n));
  s.metric("truth_inside_95", inside ? 1.0 : 0.0);
  maybe_scatter(s, "observations.svg", "observations", {{obs.x_obs}});
}

void pr(Session& s, const Inputs& in, std::ostream& out) {
  if (in.eigvals.empty() == !in.data.has_value())
    throw UsageError("pr needs exactly one of --eigvals or --data");
  double value = 0.0;
  if (!in.eigvals.empty()) {
    value = analysis::participation_ratio(in.eigvals);
  } else {
    value = analysis::participation_ratio_cov(sample_covariance(read_points(*in.data)));
  }
  std::string text = datasets::format_double(value);
  if (text.find_first_of(".en") == std::string::npos) text += ".0";
  out << text << '\n';
  s.metric("participation_ratio", value);
}

void residual_acf(Session& s, const Inputs& in) {
  const auto& cfg = s.config();
  if (!in.checkpoint) throw UsageError("residual-acf needs --checkpoint");
  auto model = load_model(*in.checkpoint);
  const Matrix data = in.data ? read_points(*in.data) : make_dataset(cfg, cfg.seed(), cfg.dataset().n).cloud.points;
  detail::require(data.cols() == model->frame.dim(), "training data dimension does not match the model");
  const Matrix train_w = datasets::whiten(data, model->frame);

  const Json& a = cfg.tree.at("acf");
  const std::size_t n = std::min(a.at("n_traj").get<std::size_t>(), train_w.rows());
  RngStream rng = RngStream(cfg.seed() + 6).substream(0);
  Matrix start(n, train_w.cols());
  for (std::size_t i = 0; i < n; ++i) {
    const auto src = train_w.row(rng.index(train_w.rows()));
    std::copy(src.begin(), src.end(), start.row(i).begin());
  }
  const auto disc = cfg.grid(model->schedule.t_max());
  const auto report = analysis::residual_autocorrelation(model, train_w, start, disc,
                                                         a.at("max_lag").get<std::size_t>(), cfg.time_floor());
  write_text(s.artifact("acf.json"), analysis::to_json(report));
  {
    std::ofstream out(s.artifact("acf.csv"));
    out << "lag,lag_time,acf\n";
    for (std::size_t i = 0; i < report.lags.size(); ++i)
      out << report.lags[i] << ',' << datasets::format_double(report.lag_times[i]) << ','
          << datasets::format_double(report.values[i]) << '\n';
  }
  if (cfg.svg()) svg::line(s.artifact("acf.svg"), "residual autocorrelation", report.values);
  const std::size_t min_lag = a.at("min_lag").get<std::size_t>();
  s.metric("mean_abs_beyond_min_lag", report.mean_abs_beyond(min_lag));
  s.metric("min_lag", static_cast<double>(min_lag));
  s.metric("n_traj", static_cast<double>(n));
}

bool oracle_check(Session& s, std::ostream& out) {
  bool ok = true;
  for (const auto& r : run_oracle_checks(s.config().seed())) {
    out << (r.passed() ? "PASS " : "FAIL ") << r.name << " error=" << r.error << " tol=" << r.tolerance << '\n';
    s.metric(r.name + "_error", r.error);
    ok = ok && r.passed();
  }
  s.metric("all_passed", ok ? 1.0 : 0.0);
  return ok;
}

}  // namespace inflare::cli
