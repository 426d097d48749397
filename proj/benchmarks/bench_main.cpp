#include <benchmark/benchmark.h>

#include "customkd/config.hpp"
#include "customkd/distill.hpp"
#include "customkd/experiment.hpp"
#include "customkd/graph.hpp"
#include "customkd/metrics.hpp"
#include "customkd/ops.hpp"

using namespace customkd;

namespace {

Tensor filled(std::size_t rows, std::size_t cols, double v) {
  return Tensor::from({rows, cols}, std::vector<double>(rows * cols, v));
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  auto a = filled(n, n, 0.5);
  auto b = filled(n, n, 0.25);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b).values().data());
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(64)->Arg(128);

void BM_MatmulBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    auto a = Tensor::from({n, n}, std::vector<double>(n * n, 0.5), true);
    auto b = Tensor::from({n, n}, std::vector<double>(n * n, 0.25), true);
    backward(sum(matmul(a, b)));
    benchmark::DoNotOptimize(a.grad().data());
  }
}
BENCHMARK(BM_MatmulBackward)->Arg(64);

struct Fixture {
  ExperimentConfig cfg = parse_config(R"({"benchmark": {"kind": "uda"}, "method": "customkd", "teacher": {"preset": "small"}})");
  ExperimentCache cache;
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

TrainContext fresh_context() {
  auto& f = fixture();
  return make_train_context(f.cache.student(f.cfg).model.clone(), f.cache.teacher(f.cfg).model.encoder.clone(),
                            f.cache.bundle(f.cfg), f.cfg.weights, f.cfg.training, Method::kCustomKd, 7);
}

void BM_FeatureCustomizationEpoch(benchmark::State& state) {
  auto ctx = fresh_context();
  for (auto _ : state) benchmark::DoNotOptimize(feature_customization_epoch(ctx));
}
BENCHMARK(BM_FeatureCustomizationEpoch)->Unit(benchmark::kMillisecond);

void BM_DistillationEpoch(benchmark::State& state) {
  auto ctx = fresh_context();
  for (auto _ : state) benchmark::DoNotOptimize(knowledge_distillation_epoch(ctx).total);
}
BENCHMARK(BM_DistillationEpoch)->Unit(benchmark::kMillisecond);

void BM_LinearCka(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  FeatureMatrix x{n, 32, std::vector<double>(n * 32)};
  FeatureMatrix y{n, 16, std::vector<double>(n * 16)};
  for (std::size_t i = 0; i < x.values.size(); ++i) x.values[i] = static_cast<double>((i * 7919) % 101) / 101.0;
  for (std::size_t i = 0; i < y.values.size(); ++i) y.values[i] = static_cast<double>((i * 104729) % 97) / 97.0;
  for (auto _ : state) benchmark::DoNotOptimize(linear_cka(x, y));
}
BENCHMARK(BM_LinearCka)->Arg(480)->Arg(2000);

}  // namespace

BENCHMARK_MAIN();
