// SPDX-License-Identifier: Apache-2.0
//
// Hot paths at the default model size: matrix products, the full forward,
// cached reasoning, one joint training step and pooled evaluation.

#include <benchmark/benchmark.h>

#include "rge/model.hpp"
#include "rge/ops.hpp"
#include "rge/retrieval.hpp"
#include "rge/run_config.hpp"
#include "rge/trainer.hpp"

namespace rge {
namespace {

Tensor<float> random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> data(rows * cols);
  for (auto& v : data) v = static_cast<float>(rng.normal());
  return Tensor<float>::from_data({rows, cols}, std::move(data));
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_matrix(n, n, 1);
  const auto b = random_matrix(n, n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(ops::matmul(a, b));
  state.counters["FLOP/s"] =
      benchmark::Counter(static_cast<double>(state.iterations()) * 2.0 * double(n * n * n), benchmark::Counter::kIsRate);
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

struct Fixture {
  RunConfig config;
  TaskGenerator generator{config.task};
  Parameters<float> params = init_params<float>(config.model_for(0));
  DatasetSplits data = generate_dataset(generator, 0, 256, 64);
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

void BM_ForwardFull(benchmark::State& state) {
  const auto& f = fixture();
  const auto& query = f.data.eval[0].query;
  for (auto _ : state) {
    NoGradGuard guard;
    benchmark::DoNotOptimize(forward_full(f.params, query));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(query.size()));
}
BENCHMARK(BM_ForwardFull);

void BM_EmbedWithReasoning(benchmark::State& state) {
  const auto& f = fixture();
  const auto budget = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(embed_with_reasoning(f.params, f.data.eval[1].query, budget));
}
BENCHMARK(BM_EmbedWithReasoning)->Arg(16)->Arg(64);

void BM_TrainStep(benchmark::State& state) {
  const auto& f = fixture();
  auto params = f.params.clone();
  auto optimizer = OptimizerState<float>::zeros_like(params);
  auto config = f.config.train_for(0);
  config.mode = static_cast<SupervisionMode>(state.range(0));
  std::vector<const ExampleTriple*> batch;
  for (std::size_t i = 0; i < config.batch_size; ++i) batch.push_back(&f.data.train[i]);
  for (auto _ : state) benchmark::DoNotOptimize(train_step(params, optimizer, Batch(batch), config));
  state.SetLabel(std::string(to_string(config.mode)));
}
BENCHMARK(BM_TrainStep)
    ->Arg(static_cast<int>(SupervisionMode::kBaseline))
    ->Arg(static_cast<int>(SupervisionMode::kOracleLeaky))
    ->Arg(static_cast<int>(SupervisionMode::kSelfGenerated))
    ->Unit(benchmark::kMillisecond);

void BM_EvaluateDirect(benchmark::State& state) {
  const auto& f = fixture();
  const auto pools = build_eval_pools(f.generator, f.data.eval, f.config.pool_size, 0);
  EvalOptions options;
  for (auto _ : state) benchmark::DoNotOptimize(evaluate(f.params, f.data.eval, pools, options));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(f.data.eval.size()));
}
BENCHMARK(BM_EvaluateDirect)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace rge

BENCHMARK_MAIN();
