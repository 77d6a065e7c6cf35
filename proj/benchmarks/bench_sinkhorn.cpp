#include <random>

#include <benchmark/benchmark.h>

#include "eegbridge/sbp.hpp"

namespace {

eegbridge::EmpiricalDistribution cloud(Eigen::Index n, Eigen::Index d, double shift, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXd x(n, d);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = g(rng) + shift;
  return eegbridge::EmpiricalDistribution::uniform(std::move(x));
}

void BM_SbpEnergy(benchmark::State& state) {
  const auto n = state.range(0);
  const auto p = cloud(n, 3, 0.0, 1);
  const auto q = cloud(n, 3, 0.8, 2);
  const eegbridge::SBPConfig cfg;
  int iterations = 0;
  for (auto _ : state) {
    const auto res = eegbridge::sbp_energy(p, q, cfg);
    iterations = res.iterations_used;
    benchmark::DoNotOptimize(res.energy);
  }
  state.counters["sinkhorn_iterations"] = iterations;
}
BENCHMARK(BM_SbpEnergy)->Arg(100)->Arg(200)->Arg(500)->Unit(benchmark::kMillisecond);

void BM_SbpEnergyWarmStart(benchmark::State& state) {
  const auto p = cloud(200, 3, 0.0, 1);
  const auto q = cloud(200, 3, 0.8, 2);
  const auto q2 = cloud(200, 3, 0.85, 3);
  const eegbridge::SBPConfig cfg;
  const auto first = eegbridge::sbp_energy(p, q, cfg);
  for (auto _ : state) {
    benchmark::DoNotOptimize(eegbridge::sbp_energy(p, q2, cfg, &first.potentials).energy);
  }
}
BENCHMARK(BM_SbpEnergyWarmStart)->Unit(benchmark::kMillisecond);

void BM_CostMatrix(benchmark::State& state) {
  const auto p = cloud(state.range(0), 3, 0.0, 1);
  const auto q = cloud(state.range(0), 3, 0.5, 2);
  for (auto _ : state) benchmark::DoNotOptimize(eegbridge::cost_matrix(p, q).data());
}
BENCHMARK(BM_CostMatrix)->Arg(200)->Arg(2000)->Unit(benchmark::kMicrosecond);

}  // namespace
