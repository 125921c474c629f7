#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <limits>
#include <set>

#include "pbtts/error.hpp"
#include "pbtts/trainer.hpp"

using namespace pbtts;

namespace {

const Corpus& small_corpus() {
  static const Corpus c = [] {
    SyntheticSpec s;
    s.utts_per_cell = 2;
    s.test_utterances = 2;
    s.max_phones = 6;
    return generate_corpus(s);
  }();
  return c;
}

ModelConfig small_model() {
  ModelConfig c;
  c.d_model = 16;
  c.d_spk_sty_embed = 4;
  c.n_enc_blocks = 1;
  c.n_dec_blocks = 1;
  c.d_ff = 16;
  c.bottleneck_cnn_channels = 8;
  c.agg_cnn_channels = 8;
  c.prenet_hidden = 8;
  c.postnet_channels = 8;
  return c;
}

TrainConfig small_train(std::size_t steps) {
  TrainConfig t;
  t.max_steps = steps;
  t.batch_size = 3;
  t.warmup_steps = 10;
  return t;
}

bool tensor_identical(const Tensor<float>& a, const Tensor<float>& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    if (std::bit_cast<std::uint32_t>(a.data()[i]) != std::bit_cast<std::uint32_t>(b.data()[i])) return false;
  }
  return true;
}

}  // namespace

TEST(Schedule, NoamWarmupAndDecay) {
  TrainConfig t;
  t.lr_scale = 2.0;
  t.warmup_steps = 100;
  const double k = 2.0 / std::sqrt(64.0);
  EXPECT_NEAR(noam_lr(t, 64, 1), k * 1.0 * std::pow(100.0, -1.5), 1e-15);
  EXPECT_NEAR(noam_lr(t, 64, 100), k / 10.0, 1e-12);
  EXPECT_NEAR(noam_lr(t, 64, 400), k / 20.0, 1e-12);
  EXPECT_LT(noam_lr(t, 64, 50), noam_lr(t, 64, 100));
  EXPECT_GT(noam_lr(t, 64, 100), noam_lr(t, 64, 101));
}

TEST(Batches, EpochsArePermutationsAndStepsAreStable) {
  const std::size_t n = 7, b = 3;
  std::vector<std::size_t> stream;
  for (std::size_t step = 1; step <= 7; ++step) {
    const auto idx = batch_indices(n, b, 11, step);
    ASSERT_EQ(idx.size(), b);
    EXPECT_EQ(idx, batch_indices(n, b, 11, step));
    stream.insert(stream.end(), idx.begin(), idx.end());
  }
  for (std::size_t e = 0; e < 3; ++e) {
    std::set<std::size_t> seen(stream.begin() + static_cast<std::ptrdiff_t>(e * n),
                               stream.begin() + static_cast<std::ptrdiff_t>((e + 1) * n));
    EXPECT_EQ(seen.size(), n) << "epoch " << e;
  }
  EXPECT_NE(batch_indices(n, b, 11, 1), batch_indices(n, b, 12, 1));
  EXPECT_THROW(batch_indices(0, b, 11, 1), InputError);
}

TEST(Train, ZeroStepsIsNoOp) {
  const auto m = small_model();
  const auto init = init_params(m);
  const auto r = train(make_examples(small_corpus(), false), m, small_train(0), init.clone());
  EXPECT_TRUE(params_identical(r.params, init));
  EXPECT_TRUE(r.curve.empty());
}

TEST(Train, FullFreezeChangesNothing) {
  const auto m = small_model();
  const auto init = init_params(m);
  auto t = small_train(4);
  t.frozen_groups = parameter_groups();
  const auto r = train(make_examples(small_corpus(), false), m, t, init.clone());
  EXPECT_TRUE(params_identical(r.params, init));
  EXPECT_EQ(r.curve.size(), 4u);
  EXPECT_TRUE(r.optimizer.m.empty());
  EXPECT_TRUE(r.optimizer.v.empty());
}

TEST(Train, FreezingSoundness) {
  const auto m = small_model();
  const auto init = init_params(m);
  auto t = small_train(3);
  t.frozen_groups = {"decoder", "cross_attention"};
  const auto r = train(make_examples(small_corpus(), false), m, t, init.clone());
  std::set<std::string> changed_groups;
  for (const auto& e : init.entries()) {
    const bool same = tensor_identical(e.tensor, r.params.get(e.name));
    if (e.group == "decoder" || e.group == "cross_attention") {
      EXPECT_TRUE(same) << e.name;
      EXPECT_FALSE(r.optimizer.m.count(e.name)) << e.name;
    } else {
      EXPECT_TRUE(r.optimizer.m.count(e.name)) << e.name;
      if (!same) changed_groups.insert(e.group);
    }
  }
  EXPECT_EQ(changed_groups, (std::set<std::string>{"encoder", "speaker_embed", "style_embed", "projections",
                                                    "bottleneck", "agg_cnn"}));
}

TEST(Train, DeterministicAcrossRuns) {
  const auto m = small_model();
  const auto ex = make_examples(small_corpus(), false);
  const auto a = train(ex, m, small_train(5), init_params(m));
  const auto b = train(ex, m, small_train(5), init_params(m));
  EXPECT_TRUE(params_identical(a.params, b.params));
  EXPECT_EQ(a.optimizer, b.optimizer);
  ASSERT_EQ(a.curve.size(), b.curve.size());
  for (std::size_t i = 0; i < a.curve.size(); ++i) EXPECT_EQ(a.curve[i].total, b.curve[i].total);
}

TEST(Train, ResumeMatchesUninterruptedRun) {
  const auto m = small_model();
  const auto ex = make_examples(small_corpus(), false);
  const auto full = train(ex, m, small_train(6), init_params(m));
  const auto half = train(ex, m, small_train(3), init_params(m));
  const auto rest = train(ex, m, small_train(6), half.params.clone(), half.optimizer);
  EXPECT_TRUE(params_identical(full.params, rest.params));
  ASSERT_EQ(rest.curve.size(), 3u);
  EXPECT_EQ(rest.curve.front().step, 4u);
  EXPECT_EQ(rest.curve.back().total, full.curve.back().total);
}

TEST(Train, LossRecombinesAtEveryStep) {
  const auto m = small_model();
  const auto ex = make_examples(small_corpus(), false);
  for (const auto& [alpha, beta] : {std::pair{1.0, 1.0}, std::pair{0.5, 2.0}}) {
    auto t = small_train(5);
    t.alpha = alpha;
    t.beta = beta;
    const auto r = train(ex, m, t, init_params(m));
    for (const auto& rec : r.curve) {
      const double recombined = rec.l_spec + alpha * rec.l_stop + beta * rec.l_prosody;
      EXPECT_LE(std::fabs(rec.total - recombined), 1e-6 * std::fabs(rec.total)) << "step " << rec.step;
      EXPECT_GE(rec.l_spec, 0.0);
      EXPECT_GE(rec.l_stop, 0.0);
      EXPECT_GE(rec.l_prosody, 0.0);
    }
  }
}

TEST(Train, NonFiniteLossNamesStep) {
  const auto m = small_model();
  auto p = init_params(m);
  p.get("dec.mel_head.b").mutable_data()[0] = std::numeric_limits<float>::quiet_NaN();
  try {
    train(make_examples(small_corpus(), false), m, small_train(3), std::move(p));
    FAIL() << "NaN loss was not detected";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("step 1"), std::string::npos) << e.what();
  }
}

TEST(Train, LossDecreases) {
  const auto m = small_model();
  const auto ex = make_examples(small_corpus(), false);
  const auto init = init_params(m);
  const auto before = evaluate_loss(Network<float>(m, init), ex, 1.0, 1.0);
  const auto r = train(ex, m, small_train(60), init.clone());
  const auto after = evaluate_loss(Network<float>(m, r.params), ex, 1.0, 1.0);
  EXPECT_LT(after.total, 0.5 * before.total);
}

TEST(Train, RejectsEmptyCorpusAndUnknownGroups) {
  const auto m = small_model();
  EXPECT_THROW(train({}, m, small_train(1), init_params(m)), InputError);
  auto t = small_train(1);
  t.frozen_groups = {"postnet"};
  EXPECT_THROW(train(make_examples(small_corpus(), false), m, t, init_params(m)), ConfigError);
}

TEST(Refine, StrategyMapping) {
  EXPECT_TRUE(frozen_groups_for(RefineStrategy::kFull).empty());
  EXPECT_EQ(frozen_groups_for(RefineStrategy::kEncoderOnly), (std::vector<std::string>{"cross_attention", "decoder"}));
  EXPECT_EQ(frozen_groups_for(RefineStrategy::kEncoderPlusCrossAttention), (std::vector<std::string>{"decoder"}));
  for (auto s : {RefineStrategy::kFull, RefineStrategy::kEncoderOnly, RefineStrategy::kEncoderPlusCrossAttention}) {
    EXPECT_EQ(parse_refine_strategy(refine_strategy_name(s)), s);
  }
  EXPECT_THROW(parse_refine_strategy("decoder_only"), ConfigError);
}

TEST(Refine, EncoderOnlyKeepsDecoder) {
  const auto m = small_model();
  const auto pretrained = init_params(m);
  const auto r =
      refine(make_examples(small_corpus(), false), m, small_train(3), pretrained, RefineStrategy::kEncoderOnly);
  bool encoder_moved = false;
  for (const auto& e : pretrained.entries()) {
    const bool same = tensor_identical(e.tensor, r.params.get(e.name));
    if (e.group == "decoder" || e.group == "cross_attention") EXPECT_TRUE(same) << e.name;
    if (e.group == "encoder" && !same) encoder_moved = true;
  }
  EXPECT_TRUE(encoder_moved);
  const auto plus = refine(make_examples(small_corpus(), false), m, small_train(3), pretrained,
                           RefineStrategy::kEncoderPlusCrossAttention);
  EXPECT_FALSE(tensor_identical(pretrained.get("dec.block0.cross.q.w"), plus.params.get("dec.block0.cross.q.w")));
  EXPECT_TRUE(tensor_identical(pretrained.get("dec.mel_head.w"), plus.params.get("dec.mel_head.w")));
}

TEST(LossCurve, CsvLayout) {
  const std::vector<LossRecord> curve = {{1, 0.5, 0.25, 0.125, 0.875, 0.001}, {2, 1, 2, 3, 6, 0.002}};
  EXPECT_EQ(format_loss_curve(curve),
            "step,l_spec,l_stop,l_prosody,total,lr\n1,0.5,0.25,0.125,0.875,0.001\n2,1,2,3,6,0.002\n");
}
