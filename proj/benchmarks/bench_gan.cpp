#include <random>

#include <benchmark/benchmark.h>

#include "eegbridge/gan.hpp"

namespace {

using eegbridge::ad::Matrix;

Matrix gaussian(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

// One critic loss evaluation with the gradient penalty at the default sizes.
void BM_CriticStep(benchmark::State& state) {
  std::mt19937_64 rng(1);
  const eegbridge::CriticConfig cfg;
  eegbridge::CriticModel critic(cfg, 3, 10, 8, 8);
  critic.initialize(rng);
  const int batch = static_cast<int>(state.range(0));
  const Matrix real = gaussian(batch, cfg.pack_size * 3, rng);
  const Matrix gen = gaussian(batch, cfg.pack_size * 3, rng);
  const Eigen::VectorXd t = Eigen::VectorXd::Constant(batch, 0.5);
  std::vector<eegbridge::Condition> cond(static_cast<std::size_t>(batch));
  for (int i = 0; i < batch; ++i) cond[static_cast<std::size_t>(i)] = {i % 10, i % 4};
  for (auto _ : state) {
    benchmark::DoNotOptimize(eegbridge::critic_loss(real, gen, t, cond, critic, 10.0).loss);
  }
}
BENCHMARK(BM_CriticStep)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_GeneratorStep(benchmark::State& state) {
  std::mt19937_64 rng(2);
  const eegbridge::GeneratorConfig gcfg;
  const eegbridge::CriticConfig ccfg;
  eegbridge::GeneratorModel gen(gcfg, eegbridge::FeatureSchema({"theta", "alpha", "engagement"}),
                                {"s01", "s02", "s03", "s04", "s05", "s06", "s07", "s08", "s09", "s10"}, {});
  gen.initialize(rng);
  eegbridge::CriticModel critic(ccfg, 3, 10, gcfg.participant_embedding, gcfg.portion_embedding);
  critic.initialize(rng);
  const int packs = 32;
  const Matrix z = gaussian(packs * ccfg.pack_size, gcfg.latent_dim, rng);
  const Matrix real = gaussian(packs * ccfg.pack_size, 3, rng);
  std::vector<eegbridge::Condition> cond(packs);
  for (int i = 0; i < packs; ++i) cond[static_cast<std::size_t>(i)] = {i % 10, i % 4};
  for (auto _ : state) {
    benchmark::DoNotOptimize(eegbridge::generator_loss(z, cond, real, gen, critic, 1.0).loss);
  }
}
BENCHMARK(BM_GeneratorStep)->Unit(benchmark::kMillisecond);

}  // namespace
