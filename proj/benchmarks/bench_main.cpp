#include <benchmark/benchmark.h>

#include <memory>

#include "inflare/denoiser.hpp"
#include "inflare/linalg.hpp"
#include "inflare/pfode.hpp"
#include "inflare/rng.hpp"
#include "inflare/schedule.hpp"

using namespace inflare;

namespace {

const schedule::InflationSchedule kSchedule = schedule::InflationSchedule::prr(2, 1, 0.3, 11.01, 1.0, 1.15);

std::shared_ptr<const denoiser::TrainedDenoiser> default_model() {
  static const auto model = [] {
    const denoiser::DenoiserNet net(2);
    RngStream rng(1);
    Vector p = net.init_parameters(rng);
    return std::make_shared<const denoiser::TrainedDenoiser>(denoiser::TrainedDenoiser{
        net, p, p, kSchedule, {Vector(2, 0.0), Matrix::identity(2), Vector(2, 1.0), 0}, {}, {}});
  }();
  return model;
}

Matrix random_rows(std::size_t n, std::size_t d, std::uint64_t seed) {
  RngStream rng(seed);
  Matrix m(n, d);
  rng.fill_normal(m.data());
  return m;
}

void BM_DenoiserForward(benchmark::State& state) {
  const auto model = default_model();
  const Matrix x = random_rows(static_cast<std::size_t>(state.range(0)), 2, 2);
  for (auto _ : state) benchmark::DoNotOptimize(denoiser::forward(*model, x, 1.0));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_DenoiserForward)->Arg(128)->Arg(512)->Arg(2048);

void BM_TrainingStepGradient(benchmark::State& state) {
  const auto model = default_model();
  const Matrix batch = random_rows(static_cast<std::size_t>(state.range(0)), 2, 3);
  const denoiser::TrainConfig tc;
  RngStream rng(4);
  for (auto _ : state)
    benchmark::DoNotOptimize(denoiser::loss_and_grad(model->net, model->params, batch, rng, kSchedule, tc));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_TrainingStepGradient)->Arg(512);

void BM_InputVjp(benchmark::State& state) {
  const auto model = default_model();
  const Matrix x = random_rows(512, 2, 5);
  const Matrix cot = random_rows(512, 2, 6);
  for (auto _ : state) benchmark::DoNotOptimize(denoiser::input_vjp(*model, x, 1.0, cot));
}
BENCHMARK(BM_InputVjp);

void BM_NetworkRhs(benchmark::State& state) {
  const pfode::NetworkScore src(default_model());
  const Matrix x = random_rows(512, 2, 7);
  for (auto _ : state) benchmark::DoNotOptimize(pfode::rhs(x, 2.0, kSchedule, src));
}
BENCHMARK(BM_NetworkRhs);

void BM_OracleIntegrate(benchmark::State& state) {
  const pfode::OracleGaussian src(kSchedule);
  const Matrix x = random_rows(10000, 2, 8);
  const auto disc = pfode::uniform_grid(kSchedule.t_max(), 1e-2);
  const auto solver = state.range(0) == 0 ? pfode::Solver::euler : pfode::Solver::heun;
  for (auto _ : state)
    benchmark::DoNotOptimize(pfode::integrate(x, disc, pfode::Direction::inflate, solver, kSchedule, src));
}
BENCHMARK(BM_OracleIntegrate)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_SymEig(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix a = random_rows(n, n, 9);
  Matrix cov(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t k = 0; k < n; ++k) cov(i, j) += a(i, k) * a(j, k);
  for (auto _ : state) benchmark::DoNotOptimize(sym_eig(cov));
}
BENCHMARK(BM_SymEig)->Arg(3)->Arg(16)->Arg(64);

}  // namespace
BENCHMARK_MAIN();
