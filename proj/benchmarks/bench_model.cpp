#include <benchmark/benchmark.h>

#include "pbtts/checkpoint.hpp"
#include "pbtts/trainer.hpp"
#include "pbtts/transfer_eval.hpp"

using namespace pbtts;

namespace {

const Corpus& corpus() {
  static const Corpus c = [] {
    SyntheticSpec s;
    s.utts_per_cell = 2;
    s.test_utterances = 2;
    return generate_corpus(s);
  }();
  return c;
}

}  // namespace

static void BM_TrainStep(benchmark::State& state) {
  const ModelConfig m;
  const auto ex = make_examples(corpus(), false);
  auto params = init_params(m);
  TrainConfig t;
  t.max_steps = 1;
  for (auto _ : state) benchmark::DoNotOptimize(train(ex, m, t, params.clone()).curve);
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

static void BM_Synthesize(benchmark::State& state) {
  const ModelConfig m;
  const Network<float> net(m, init_params(m));
  SynthesisOptions o;
  o.max_frames = static_cast<std::size_t>(state.range(0));
  const auto& phones = corpus().split(true).front()->phones;
  for (auto _ : state) benchmark::DoNotOptimize(synthesize(net, phones, 1, 2, o).decoded.frames());
}
BENCHMARK(BM_Synthesize)->Arg(40)->Arg(120)->Unit(benchmark::kMillisecond);

static void BM_CheckpointEncode(benchmark::State& state) {
  const ModelConfig m;
  const Checkpoint ckpt{m, TrainConfig{}, corpus().stats, init_params(m), {}};
  for (auto _ : state) benchmark::DoNotOptimize(encode_checkpoint(ckpt));
}
BENCHMARK(BM_CheckpointEncode)->Unit(benchmark::kMillisecond);

static void BM_CheckpointDecode(benchmark::State& state) {
  const ModelConfig m;
  const auto bytes = encode_checkpoint({m, TrainConfig{}, corpus().stats, init_params(m), {}});
  for (auto _ : state) benchmark::DoNotOptimize(decode_checkpoint(bytes));
}
BENCHMARK(BM_CheckpointDecode)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
