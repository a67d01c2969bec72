// Serial versus OpenMP kernels. The second argument of every benchmark
// selects the execution policy: 0 serial, 1 parallel.

#include <benchmark/benchmark.h>

#include "densetune/adapter.hpp"
#include "densetune/corpus.hpp"
#include "densetune/embeddings.hpp"
#include "densetune/fixtures.hpp"
#include "densetune/loss.hpp"
#include "densetune/rng.hpp"

using namespace densetune;

namespace {

Exec policy(const benchmark::State& state) { return state.range(1) == 0 ? Exec::serial : Exec::parallel; }

void BM_TopKBatch(benchmark::State& state) {
  const auto passages = fixtures::random_store(static_cast<std::size_t>(state.range(0)), 64, 1);
  const auto queries = fixtures::random_store(256, 64, 2, "q");
  for (auto _ : state) {
    benchmark::DoNotOptimize(embeddings::top_k_batch(queries, passages, 100, policy(state)));
  }
  state.SetItemsProcessed(state.iterations() * 256);
}

void BM_Dedup(benchmark::State& state) {
  const auto corpus = fixtures::random_corpus(static_cast<std::size_t>(state.range(0)), 3, 0.2, 3, 40, 5000);
  for (auto _ : state) {
    benchmark::DoNotOptimize(corpus::dedup_corpus(corpus, policy(state)));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_ApplyAdapter(benchmark::State& state) {
  const auto store = fixtures::random_store(static_cast<std::size_t>(state.range(0)), 128, 4);
  trainer::AdapterModel model(128);
  SplitMix64 rng(5);
  for (auto& p : model.params()) p += 0.01 * rng.normal();
  for (auto _ : state) {
    benchmark::DoNotOptimize(trainer::apply_adapter(model, store, policy(state)));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_FusedLoss(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  constexpr std::size_t K = 19, dim = 64;
  SplitMix64 rng(6);
  loss::BatchEmbeddings batch;
  batch.n = n;
  batch.K = K;
  batch.queries = loss::Matrix(n, dim);
  batch.passages = loss::Matrix(n * (K + 1), dim);
  for (auto& v : batch.queries.data()) v = rng.normal();
  for (auto& v : batch.passages.data()) v = rng.normal();
  batch.teacher_pos.assign(n, 0.9);
  batch.teacher_neg = loss::Matrix(n, K, 0.2);
  const loss::LossConfig cfg;
  for (auto _ : state) {
    benchmark::DoNotOptimize(loss::combined_loss_embeddings(batch, cfg, policy(state)));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

}  // namespace

BENCHMARK(BM_TopKBatch)->ArgsProduct({{10000, 50000}, {0, 1}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Dedup)->ArgsProduct({{10000, 50000}, {0, 1}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ApplyAdapter)->ArgsProduct({{10000, 50000}, {0, 1}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_FusedLoss)->ArgsProduct({{64, 256}, {0, 1}})->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
