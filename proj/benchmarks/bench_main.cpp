#include <benchmark/benchmark.h>

#include <random>

#include "ctrl/data.hpp"
#include "ctrl/layers.hpp"
#include "ctrl/model.hpp"
#include "ctrl/ops.hpp"

namespace {

ctrl::Tensor random_tensor(ctrl::Shape shape, std::uint64_t seed) {
  ctrl::Tensor t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

// Upper conv layer at full width: 256 -> 256 channels, kernel 5.
void BM_Conv1dForward(benchmark::State& state) {
  const auto len = static_cast<std::size_t>(state.range(0));
  const auto x = random_tensor({256, len}, 1);
  const auto w = random_tensor({256, 256, 5}, 2);
  const auto b = random_tensor({256}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(ctrl::conv1d_same(x, w, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(len));
}
BENCHMARK(BM_Conv1dForward)->Arg(8)->Arg(32);

void BM_Conv1dBackward(benchmark::State& state) {
  const auto len = static_cast<std::size_t>(state.range(0));
  const auto x = random_tensor({256, len}, 1);
  const auto w = random_tensor({256, 256, 5}, 2);
  const auto dout = random_tensor({256, len}, 4);
  std::vector<double> dw(w.size()), db(256);
  for (auto _ : state) benchmark::DoNotOptimize(ctrl::conv1d_same_backward(x, w, dout, dw, db));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(len));
}
BENCHMARK(BM_Conv1dBackward)->Arg(8)->Arg(32);

void BM_CnnCtrlForward(benchmark::State& state) {
  const auto m = ctrl::make_cnn_ctrl("ctrl", 256, 128, 0.55, 5);
  const auto x = random_tensor({256, 32}, 6);
  ctrl::Rng rng(7);
  for (auto _ : state) benchmark::DoNotOptimize(ctrl::cnn_ctrl_forward(x, m, ctrl::Mode::kTrain, rng));
}
BENCHMARK(BM_CnnCtrlForward);

// One training step of a full-size CTRL model on a single 24-token sentence.
void BM_ModelTrainStep(benchmark::State& state) {
  ctrl::ModelConfig config;
  config.vocab_size = 500;
  ctrl::Model model = ctrl::Model::build(config);
  std::vector<ctrl::EncodedSentence> sentences(1);
  for (int t = 0; t < 24; ++t) {
    sentences[0].ids.push_back(2 + t);
    sentences[0].labels.push_back(2);
  }
  const auto batches = ctrl::make_ordered_batches(sentences, 1);
  ctrl::Rng rng(1);
  for (auto _ : state) {
    ctrl::ForwardTrace trace;
    const ctrl::Tensor logits = model.forward(batches[0], ctrl::Mode::kTrain, rng, &trace);
    model.backward(trace, logits);
  }
}
BENCHMARK(BM_ModelTrainStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
