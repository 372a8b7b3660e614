#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "altune/acquisition.hpp"
#include "altune/engine.hpp"
#include "altune/tapt.hpp"

using namespace altune;

namespace {

Dataset pool_of(std::size_t per_class) {
  SynthConfig cfg;
  cfg.per_class_counts = {per_class};
  cfg.seed = 1;
  return zscore_normalize(synth_pool(cfg).data).data;
}

void BM_ContextForward(benchmark::State& state) {
  const Dataset d = pool_of(static_cast<std::size_t>(state.range(0)) / 4);
  const EncoderModel enc(EncoderConfig{}, d.feature_dim(), 1);
  const Matrix in = enc.context_input(d.feature_matrix());
  for (auto _ : state) benchmark::DoNotOptimize(enc.context_net().forward(in));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(d.size()));
}
BENCHMARK(BM_ContextForward)->Arg(32)->Arg(256);

void BM_TaptBatchLoss(benchmark::State& state) {
  const Dataset d = pool_of(8);
  EncoderModel enc(EncoderConfig{}, d.feature_dim(), 1);
  const Matrix x = d.feature_matrix();
  std::mt19937_64 rng(2);
  std::vector<MaskPlan> masks;
  for (std::size_t i = 0; i < x.rows(); ++i) masks.push_back(make_mask(8, 0.15, rng));
  auto params = enc.trainable_parameters();
  for (auto _ : state) {
    GradBlocks g = zeros_like(params);
    benchmark::DoNotOptimize(tapt_batch_loss(enc, x, masks, 0.1, &g));
  }
}
BENCHMARK(BM_TaptBatchLoss);

void BM_KMeans(benchmark::State& state) {
  const Matrix pts = pool_of(static_cast<std::size_t>(state.range(0)) / 4).feature_matrix();
  for (auto _ : state) benchmark::DoNotOptimize(kmeans(pts, 4, 3).sse);
}
BENCHMARK(BM_KMeans)->Arg(400)->Arg(2000);

void BM_ScorePool(benchmark::State& state) {
  const Dataset d = pool_of(360).without_labels();
  const ClassifierModel model(EncoderModel(EncoderConfig{}, d.feature_dim(), 1), 4, 1);
  AcquisitionSpec spec;
  spec.kind = static_cast<AcquisitionKind>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(score_pool(model, d, spec, 5));
  state.SetLabel(to_string(spec.kind));
}
BENCHMARK(BM_ScorePool)
    ->Arg(static_cast<int>(AcquisitionKind::kEntropy))
    ->Arg(static_cast<int>(AcquisitionKind::kCommitteeBald));

}  // namespace

BENCHMARK_MAIN();
