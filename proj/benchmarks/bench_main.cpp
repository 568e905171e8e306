#include <benchmark/benchmark.h>

#include <random>

#include "tkd/data.hpp"
#include "tkd/distill.hpp"
#include "tkd/encoder.hpp"
#include "tkd/tensor.hpp"
#include "tkd/train.hpp"

namespace {

tkd::Tensor random_tensor(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = dist(gen);
  return tkd::Tensor::parameter({rows, cols}, std::move(v), "x");
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const tkd::Tensor a = random_tensor(n, n, 1), b = random_tensor(n, n, 2);
  tkd::NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(tkd::matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(64)->Arg(128);

void BM_MatmulBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const tkd::Tensor a = random_tensor(n, n, 1), b = random_tensor(n, n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(tkd::backward(tkd::sum_all(tkd::matmul(a, b))));
}
BENCHMARK(BM_MatmulBackward)->Arg(32)->Arg(64)->Arg(128);

struct Workload {
  tkd::Dataset data = tkd::synth_task(tkd::SynthKind::Keyword, 7, 64, 50, 16);
  std::vector<std::size_t> indices;
  Workload() {
    for (std::size_t i = 0; i < data.size(); ++i) indices.push_back(i);
  }
};

tkd::ModelConfig model_of(const benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  return tkd::ModelConfig{2, 2, d, 2 * d, 50, 16, 2, 1e-5};
}

void BM_EncoderForward(benchmark::State& state) {
  const Workload w;
  const tkd::EncoderModel model(model_of(state), 1);
  const tkd::TokenBatch batch = tkd::make_batch(w.data, w.indices);
  tkd::NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(tkd::encode(model, batch));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(w.data.size()));
}
BENCHMARK(BM_EncoderForward)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_EncoderForwardBackward(benchmark::State& state) {
  const Workload w;
  const tkd::EncoderModel model(model_of(state), 1);
  const tkd::TokenBatch batch = tkd::make_batch(w.data, w.indices);
  std::vector<std::size_t> labels;
  for (const auto& e : w.data.examples) labels.push_back(e.label);
  for (auto _ : state) {
    const tkd::Tensor loss = tkd::task_loss(labels, tkd::softmax_rows(tkd::encode(model, batch)));
    benchmark::DoNotOptimize(tkd::backward(loss));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(w.data.size()));
}
BENCHMARK(BM_EncoderForwardBackward)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_TrainEpoch(benchmark::State& state) {
  const Workload w;
  tkd::TrainConfig cfg;
  cfg.epochs = 1;
  for (auto _ : state) {
    tkd::EncoderModel model(model_of(state), 1);
    benchmark::DoNotOptimize(tkd::train_classifier(model, w.data, nullptr, cfg));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(w.data.size()));
}
BENCHMARK(BM_TrainEpoch)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_SoftLabels(benchmark::State& state) {
  const Workload w;
  const tkd::EncoderModel teacher(model_of(state), 1);
  for (auto _ : state) benchmark::DoNotOptimize(tkd::generate_soft_labels(teacher, w.data, 2.0));
}
BENCHMARK(BM_SoftLabels)->Arg(64)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
