#include <benchmark/benchmark.h>

#include <random>

#include "d2ip/baselines.hpp"
#include "d2ip/pipeline.hpp"
#include "d2ip/tensor_ops.hpp"

using namespace d2ip;

namespace {

const Box kThorax{{-0.16, -0.12, 0.0}, {0.16, 0.12, 0.16}};

std::vector<double> random_values(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

SensitivityMatrix desk_operator(const GridGeometry& g) {
  const auto e = default_electrodes(g);
  return normalize_sensitivity(
      assemble_sensitivity(g, e, generate_protocol(e, ProtocolScheme::adjacent_in_layer)));
}

void BM_Conv3x3x3(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const int groups = static_cast<int>(state.range(1));
  const nn::ConvSpec spec{c, c, 3, 1, 1, groups};
  const nn::Shape in{c, 8, 16, 16};
  const auto x = random_values(in.size(), 1);
  const auto w = random_values(spec.weight_size(), 2);
  for (auto _ : state) {
    nn::Tape t;
    const auto y = nn::conv3d(t, t.constant(in, x), t.constant({static_cast<int>(w.size()), 1, 1, 1}, w),
                              -1, spec);
    benchmark::DoNotOptimize(t.value(y).data());
  }
}
BENCHMARK(BM_Conv3x3x3)->Args({8, 1})->Args({8, 8})->Args({32, 1})->Args({32, 32});

void BM_Pointwise(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const nn::ConvSpec spec{c, c, 1, 1, 1, 1};
  const nn::Shape in{c, 8, 16, 16};
  const auto x = random_values(in.size(), 3);
  const auto w = random_values(spec.weight_size(), 4);
  for (auto _ : state) {
    nn::Tape t;
    const auto y = nn::conv3d(t, t.constant(in, x), t.constant({static_cast<int>(w.size()), 1, 1, 1}, w),
                              -1, spec);
    benchmark::DoNotOptimize(t.value(y).data());
  }
}
BENCHMARK(BM_Pointwise)->Arg(8)->Arg(32);

void BM_NetworkForward(benchmark::State& state) {
  const GridGeometry g = build_grid(16, 16, 8, kThorax);
  NetworkConfig cfg;
  cfg.base_channels = static_cast<int>(state.range(0));
  const FastResUNet net(cfg, g);
  const auto theta = init_parameters(cfg);
  const auto z = sample_noise_input(g, 1);
  for (auto _ : state) benchmark::DoNotOptimize(net.forward(theta, z).data().data());
}
BENCHMARK(BM_NetworkForward)->Arg(4)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_LossAndGradient(benchmark::State& state) {
  const GridGeometry g = build_grid(16, 16, 8, kThorax);
  const auto J = desk_operator(g);
  RunConfig cfg;
  cfg.network.base_channels = static_cast<int>(state.range(0));
  const FastResUNet net(cfg.network, g);
  const auto theta = init_parameters(cfg.network);
  const auto z = sample_noise_input(g, 1);
  const auto dv = random_values(J.measurements(), 5);
  FrameHistory history;
  for (auto _ : state) {
    auto grads = zero_gradients(theta);
    benchmark::DoNotOptimize(loss_and_gradient(net, theta, z, J, dv, history, cfg, grads).total);
  }
}
BENCHMARK(BM_LossAndGradient)->Arg(4)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_TikhonovSetup(benchmark::State& state) {
  const GridGeometry g = build_grid(16, 16, 8, kThorax);
  const auto J = desk_operator(g);
  for (auto _ : state) {
    TikhonovSolver solver(J);
    benchmark::DoNotOptimize(&solver);
  }
}
BENCHMARK(BM_TikhonovSetup)->Unit(benchmark::kMillisecond);

void BM_TikhonovSolve(benchmark::State& state) {
  const GridGeometry g = build_grid(16, 16, 8, kThorax);
  const auto J = desk_operator(g);
  const TikhonovSolver solver(J);
  const auto dv = random_values(J.measurements(), 6);
  for (auto _ : state) benchmark::DoNotOptimize(solver.solve(dv, 0.005).data());
}
BENCHMARK(BM_TikhonovSolve)->Unit(benchmark::kMicrosecond);

void BM_AssembleSensitivity(benchmark::State& state) {
  const GridGeometry g = build_grid(16, 16, 8, kThorax);
  const auto e = default_electrodes(g);
  const auto p = generate_protocol(e, ProtocolScheme::adjacent_in_layer);
  for (auto _ : state) benchmark::DoNotOptimize(assemble_sensitivity(g, e, p).values.data());
}
BENCHMARK(BM_AssembleSensitivity)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
