#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "app.hpp"
#include "inflare/checkpoint.hpp"
#include "config.hpp"
#include "oracles.hpp"

using namespace inflare::cli;

namespace {

int invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "inflare");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::json metrics(const std::filesystem::path& dir) { return nlohmann::json::parse(slurp(dir / "metrics.json")); }

}  // namespace

TEST(Cli, ParticipationRatioPrintsValue) {
  const auto dir = oracle::scratch_dir("cli_pr");
  testing::internal::CaptureStdout();
  const int code = invoke({"pr", "--eigvals", "4,1,1", "-o", dir.string()});
  const std::string out = testing::internal::GetCapturedStdout();
  EXPECT_EQ(code, 0);
  EXPECT_EQ(out, "2.0\n");
  EXPECT_EQ(metrics(dir)["metrics"]["participation_ratio"], 2.0);
}

TEST(Cli, UsageErrorsExitWithTwo) {
  const auto dir = oracle::scratch_dir("cli_usage");
  testing::internal::CaptureStderr();
  EXPECT_EQ(invoke({"pr", "--bogus"}), 2);
  EXPECT_EQ(invoke({"frobnicate"}), 2);
  EXPECT_EQ(invoke({"gen-data", "--set", "dataset.colour=red", "-o", dir.string()}), 2);
  EXPECT_EQ(invoke({"gen-data", "--set", "dataset.n=\"many\"", "-o", dir.string()}), 2);
  EXPECT_EQ(invoke({"gen-data", "banana", "-o", dir.string()}), 2);
  EXPECT_EQ(invoke({"flow", "--oracle", "--checkpoint", "/nonexistent.iflow", "-o", dir.string()}), 2);
  EXPECT_EQ(invoke({"pr", "-o", dir.string()}), 2);
  testing::internal::GetCapturedStderr();
}

TEST(Config, FilesAndOverridesLayer) {
  const auto dir = oracle::scratch_dir("cli_config");
  std::ofstream(dir / "run.toml") << "seed = 9\n[dataset]\nkind = \"moons\"\nn = 300\n[train]\nhidden = [16, 16]\n";
  std::ofstream(dir / "run.json") << R"({"flow": {"solver": "heun"}})";
  const auto a = resolve_config(dir / "run.toml", {"dataset.noise_sd=0.2"}, nlohmann::json{{"dataset", {{"n", 50}}}});
  EXPECT_EQ(a.seed(), 9u);
  EXPECT_EQ(a.dataset().kind, inflare::datasets::DatasetKind::moons);
  EXPECT_EQ(a.dataset().n, 50u);
  EXPECT_DOUBLE_EQ(a.dataset().noise_sd, 0.2);
  const auto b = resolve_config(dir / "run.json", {}, nlohmann::json::object());
  EXPECT_EQ(b.solver(), inflare::pfode::Solver::heun);
  EXPECT_NE(config_hash(a.tree), config_hash(b.tree));
  EXPECT_EQ(config_hash(a.tree), config_hash(a.tree));
  std::ofstream(dir / "bad.toml") << "[dataset]\nshape = 1\n";
  EXPECT_THROW(resolve_config(dir / "bad.toml", {}, nlohmann::json::object()), UsageError);
  EXPECT_THROW(resolve_config(dir / "missing.toml", {}, nlohmann::json::object()), UsageError);
  EXPECT_THROW(resolve_config(std::nullopt, {"noequals"}, nlohmann::json::object()), UsageError);
  EXPECT_THROW(resolve_config(std::nullopt, {"train.batch_size=0"}, nlohmann::json::object()), UsageError);
}

TEST(Cli, TinyPipelineIsReproducible) {
  const auto root = oracle::scratch_dir("cli_pipeline");
  const std::vector<std::string> train_args{"train",        "--dataset", "circles", "--steps",
                                            "30",           "--set",     "dataset.n=300",
                                            "train.hidden=[16,16]",      "train.embed_dim=8",
                                            "--batch-size", "64",        "--no-svg"};
  auto with_out = [](std::vector<std::string> v, const std::filesystem::path& out) {
    v.push_back("-o");
    v.push_back(out.string());
    return v;
  };
  ASSERT_EQ(invoke(with_out(train_args, root / "a")), 0);
  ASSERT_TRUE(std::filesystem::exists(root / "a" / "model.iflow"));
  ASSERT_EQ(invoke({"roundtrip", "--checkpoint", (root / "a" / "model.iflow").string(), "--set", "roundtrip.n_test=50",
                    "--step", "0.05", "--no-svg", "-o", (root / "rt").string()}),
            0);
  const double mse = metrics(root / "rt")["metrics"]["roundtrip_mse"];
  EXPECT_TRUE(std::isfinite(mse));
  EXPECT_LT(mse, 1e-2);

  ASSERT_EQ(invoke({"train", "-c", (root / "a" / "config.json").string(), "-o", (root / "b").string()}), 0);
  EXPECT_EQ(slurp(root / "a" / "data.csv"), slurp(root / "b" / "data.csv"));
  EXPECT_EQ(slurp(root / "a" / "loss_curve.csv"), slurp(root / "b" / "loss_curve.csv"));
  const auto ma = inflare::checkpoint::load(root / "a" / "model.iflow");
  const auto mb = inflare::checkpoint::load(root / "b" / "model.iflow");
  EXPECT_EQ(ma.params, mb.params);
  EXPECT_EQ(ma.ema, mb.ema);
  EXPECT_EQ(metrics(root / "a")["config_hash"], metrics(root / "b")["config_hash"]);
}

TEST(Cli, OracleFlowLeavesPrpPointsFixed) {
  const auto root = oracle::scratch_dir("cli_flow");
  ASSERT_EQ(invoke({"gen-data", "s_curve", "--n", "100", "-o", (root / "g").string()}), 0);
  ASSERT_EQ(invoke({"flow", "--oracle", "--set", "schedule.d=3", "--input", (root / "g" / "data.csv").string(),
                    "--no-svg", "-o", (root / "f").string()}),
            0);
  EXPECT_LE(double(metrics(root / "f")["metrics"]["final_max_abs"]), 10.0);
  EXPECT_TRUE(std::filesystem::exists(root / "f" / "manifest.json"));
}
