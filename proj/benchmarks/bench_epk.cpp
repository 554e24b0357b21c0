#include <benchmark/benchmark.h>

#include <filesystem>

#include "epk/epk.hpp"
#include "epk/graph.hpp"
#include "epk/influence.hpp"
#include "epk/lasso.hpp"
#include "epk/optimizer.hpp"
#include "epk/rng.hpp"
#include "epk/trainer.hpp"
#include "epk/trajectory.hpp"

using namespace epk;

namespace {

struct DeskRun {
  RunSetup setup;
  Dataset data;
  TrainResult result;
};

// Desk transformer trained for 40 steps; shared by the kernel benchmarks.
const DeskRun& desk_run() {
  static const DeskRun r = [] {
    DeskRun d;
    d.setup = desk_transformer_setup();
    d.setup.optimizer.steps = 40;
    d.data = generate_dataset(d.setup.data, d.setup.model);
    d.result = train(d.setup, d.data);
    return d;
  }();
  return r;
}

std::vector<double> gaussian(std::size_t n, std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

void BM_TransformerBatchGradient(benchmark::State& state) {
  const auto& r = desk_run();
  const Model m(r.setup.model);
  const auto params = m.init(1).data;
  for (auto _ : state) benchmark::DoNotOptimize(batch_gradient(m, params, r.data.train));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(r.data.train.size()));
}
BENCHMARK(BM_TransformerBatchGradient)->Unit(benchmark::kMillisecond);

void BM_OutputJacobian(benchmark::State& state) {
  const auto& r = desk_run();
  const Model m(r.setup.model);
  const auto params = m.init(1).data;
  for (auto _ : state) benchmark::DoNotOptimize(sample_jacobian(m, params, r.data.test[0]));
}
BENCHMARK(BM_OutputJacobian)->Unit(benchmark::kMicrosecond);

void BM_AdamWStep(benchmark::State& state) {
  const auto dim = static_cast<std::size_t>(state.range(0));
  auto params = gaussian(dim, 1);
  const auto grad = gaussian(dim, 2);
  OptimizerConfig cfg{.kind = OptimizerKind::adamw, .beta1 = 0.98, .beta2 = 0.99, .weight_decay = 4.0};
  OptimizerState st(dim);
  for (auto _ : state) {
    adamw_step(params, st, grad, cfg, 1e-6);
    benchmark::ClobberMemory();
  }
  state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(dim * sizeof(double) * 4));
}
BENCHMARK(BM_AdamWStep)->Arg(7183)->Arg(97331);

void BM_TestFeatureMap(benchmark::State& state) {
  const auto& r = desk_run();
  const auto T = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(test_feature_map(r.result.log, 10, r.data.test[0], T));
}
BENCHMARK(BM_TestFeatureMap)->Arg(1)->Arg(10)->Unit(benchmark::kMillisecond);

void BM_Reconstruct(benchmark::State& state) {
  const auto& r = desk_run();
  ReconstructOptions opts;
  opts.T = {static_cast<std::size_t>(state.range(0))};
  opts.mode = state.range(1) ? TrainMapMode::per_sample : TrainMapMode::aggregate;
  for (auto _ : state) benchmark::DoNotOptimize(reconstruct(r.result.log, r.data.train, r.data.test, opts));
}
BENCHMARK(BM_Reconstruct)->Args({1, 0})->Args({4, 0})->Args({1, 1})->Unit(benchmark::kMillisecond);

void BM_InfluenceTable(benchmark::State& state) {
  const auto& r = desk_run();
  InfluenceRequest req;
  req.windows = {{0, 20}, {20, 40}};
  req.T = 2;
  req.parameter_vectors = state.range(0) != 0;
  for (auto _ : state) benchmark::DoNotOptimize(compute_influence(r.result.log, r.data.train, r.data.test, req));
}
BENCHMARK(BM_InfluenceTable)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_LassoFit(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const std::size_t p = 48;
  Matrix X(n, p);
  SplitMix64 rng(3);
  for (double& v : X.values) v = rng.normal();
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = 2.0 * X(i, 3) - X(i, 7) + 0.1 * rng.normal();
  for (auto _ : state) benchmark::DoNotOptimize(lasso_fit(X, y, {.lambda = 0.01}));
}
BENCHMARK(BM_LassoFit)->Arg(400)->Arg(4000)->Unit(benchmark::kMillisecond);

void BM_TrajectoryRoundTrip(benchmark::State& state) {
  const auto& r = desk_run();
  const auto path = std::filesystem::temp_directory_path() / "epk_bench_trajectory.bin";
  for (auto _ : state) {
    save_trajectory(path, r.result.log);
    benchmark::DoNotOptimize(load_trajectory(path));
  }
  std::filesystem::remove(path);
}
BENCHMARK(BM_TrajectoryRoundTrip)->Unit(benchmark::kMillisecond);

void BM_ReplayCheck(benchmark::State& state) {
  const auto& r = desk_run();
  for (auto _ : state) benchmark::DoNotOptimize(replay_check(r.result.log, r.data));
}
BENCHMARK(BM_ReplayCheck)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
