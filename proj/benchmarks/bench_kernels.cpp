#include <benchmark/benchmark.h>

#include <cmath>

#include "pbtts/extract.hpp"
#include "pbtts/ops.hpp"

using namespace pbtts;

namespace {

Tensor<float> filled(std::size_t rows, std::size_t cols, bool requires_grad = false) {
  std::vector<float> v(rows * cols);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(std::sin(0.37 * static_cast<double>(i)));
  return Tensor<float>({rows, cols}, std::move(v), requires_grad);
}

std::vector<float> tone(double hz, std::size_t n) {
  std::vector<float> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = 0.5f * static_cast<float>(std::sin(2 * M_PI * hz * i / 16000.0));
  return x;
}

}  // namespace

static void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = filled(n, n), b = filled(n, n);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(64)->Arg(128);

static void BM_MatmulBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    Tape<float> tape;
    auto a = filled(n, n, true), b = filled(n, n, true);
    tape.backward(sum(matmul(a, b)));
    benchmark::DoNotOptimize(a.grad().data());
  }
}
BENCHMARK(BM_MatmulBackward)->Arg(32)->Arg(64);

static void BM_Attention(benchmark::State& state) {
  const auto t = static_cast<std::size_t>(state.range(0));
  const auto q = filled(t, 64), k = filled(t, 64), v = filled(t, 64);
  for (auto _ : state) benchmark::DoNotOptimize(multi_head_attention(q, k, v, 4).output);
}
BENCHMARK(BM_Attention)->Arg(16)->Arg(64);

static void BM_PitchTrack(benchmark::State& state) {
  const auto x = tone(220.0, 16000);
  const PitchConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(estimate_f0(x, cfg));
}
BENCHMARK(BM_PitchTrack)->Unit(benchmark::kMillisecond);

static void BM_MelSpectrogram(benchmark::State& state) {
  const auto x = tone(220.0, 16000);
  const MelConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(mel_spectrogram(x, cfg));
}
BENCHMARK(BM_MelSpectrogram)->Unit(benchmark::kMillisecond);
