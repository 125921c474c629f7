#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <numeric>

#include "pbtts/error.hpp"
#include "pbtts/transfer_eval.hpp"

using namespace pbtts;

namespace {

ModelConfig tiny_model() {
  ModelConfig c;
  c.d_model = 8;
  c.d_spk_sty_embed = 4;
  c.n_enc_blocks = 1;
  c.n_dec_blocks = 1;
  c.n_heads = 2;
  c.d_ff = 8;
  c.bottleneck_cnn_channels = 4;
  c.agg_cnn_channels = 4;
  c.prenet_hidden = 4;
  c.postnet_channels = 4;
  return c;
}

bool same_bits(const Tensor<float>& a, const Tensor<float>& b) {
  return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(float)) == 0;
}

// Textbook two-pass Pearson in long double.
double direct_pearson(const std::vector<double>& x, const std::vector<double>& y) {
  long double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) mx += x[i], my += y[i];
  mx /= x.size();
  my /= y.size();
  long double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return static_cast<double>(sxy / std::sqrt(sxx * syy));
}

ProsodySequence seq(const std::vector<float>& lf0, const std::vector<float>& vuv, const std::vector<float>& dur,
                    const std::vector<float>& energy) {
  ProsodySequence s(lf0.size());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = {lf0[i], vuv[i], dur[i], energy[i]};
  return s;
}

const std::vector<PhoneId> kText = {3, 7, 1, 12, 5};

}  // namespace

TEST(Pearson, FixtureMatchesDirectComputation) {
  const std::vector<double> a = {1, 2, 3, 4}, b = {1, 2, 3, 10};
  const auto r = pearson(a, b);
  ASSERT_TRUE(r.has_value());
  EXPECT_NEAR(*r, direct_pearson(a, b), 1e-12);
  EXPECT_NEAR(*r, 0.8854377448, 1e-9);
}

TEST(Pearson, AbsentWhenUndefined) {
  EXPECT_FALSE(pearson({1, 2}, {3, 4}).has_value());
  EXPECT_FALSE(pearson({1, 1, 1, 1}, {1, 2, 3, 4}).has_value());
  EXPECT_FALSE(pearson({1, 2, 3, 4}, {5, 5, 5, 5}).has_value());
  EXPECT_THROW(pearson({1, 2, 3}, {1, 2}), InputError);
}

TEST(ProsodyCorrelation, SelfAndAntiCorrelation) {
  const auto a = seq({-1.5f, 0.5f, 1.0f, -0.25f, 0.25f}, {1, 1, 1, 1, 1}, {0.3f, -1, 2, 0, -1.3f},
                     {1, 0, -1, 0.5f, -0.5f});
  const auto self = prosody_correlation(a, a);
  EXPECT_NEAR(*self.lf0, 1.0, 1e-9);
  EXPECT_NEAR(*self.dur, 1.0, 1e-9);
  EXPECT_NEAR(*self.energy, 1.0, 1e-9);
  auto neg = a;
  for (auto& v : neg) v.lf0_z = -v.lf0_z, v.dur_z = -v.dur_z, v.energy_z = -v.energy_z;
  const auto anti = prosody_correlation(neg, a);
  EXPECT_NEAR(*anti.lf0, -1.0, 1e-9);
  EXPECT_NEAR(*anti.dur, -1.0, 1e-9);
  EXPECT_NEAR(*anti.energy, -1.0, 1e-9);
}

TEST(ProsodyCorrelation, Lf0UsesOnlyMutuallyVoicedPhones) {
  const auto a = seq({1, 2, 3, 100, 4}, {1, 1, 1, 0, 1}, {1, 2, 3, 4, 5}, {1, 2, 3, 4, 5});
  const auto b = seq({2, 4, 6, -50, 8}, {1, 1, 1, 1, 1}, {1, 2, 3, 4, 5}, {1, 2, 3, 4, 5});
  const auto r = prosody_correlation(a, b);
  EXPECT_EQ(r.n_lf0, 4u);
  EXPECT_NEAR(*r.lf0, 1.0, 1e-9);
  EXPECT_EQ(r.n_dur, 5u);
  const auto unvoiced = seq({1, 2, 3}, {1, 0, 0}, {1, 2, 3}, {1, 2, 3});
  EXPECT_FALSE(prosody_correlation(unvoiced, unvoiced).lf0.has_value());
  EXPECT_THROW(prosody_correlation(a, unvoiced), InputError);
}

TEST(ProsodyCorrelation, Symmetric) {
  const auto a = seq({0.1f, -0.7f, 1.3f, 0.2f, 0.9f}, {1, 1, 0, 1, 1}, {0.5f, 0.1f, -0.3f, 1.1f, -2},
                     {0, 1, 2, 3, -1});
  const auto b = seq({0.4f, 0.2f, -1, 1.8f, 0.3f}, {1, 1, 1, 1, 0}, {1, -1, 0.2f, 0.3f, 0.9f},
                     {2, -1, 0.5f, 0.25f, 1});
  const auto ab = prosody_correlation(a, b), ba = prosody_correlation(b, a);
  EXPECT_NEAR(*ab.lf0, *ba.lf0, 1e-6);
  EXPECT_NEAR(*ab.dur, *ba.dur, 1e-6);
  EXPECT_NEAR(*ab.energy, *ba.energy, 1e-6);
}

TEST(Lf0Rmse, ZeroAndConstantOffset) {
  const auto a = seq({1, -2, 3, 0.5f}, {1, 1, 1, 0}, {0, 0, 0, 0}, {0, 0, 0, 0});
  EXPECT_EQ(*lf0_rmse(a, a), 0.0);
  auto shifted = a;
  for (auto& v : shifted) v.lf0_z += 0.5f;
  EXPECT_NEAR(*lf0_rmse(shifted, a), 0.5, 1e-6);
  const auto silent = seq({1, 2}, {0, 0}, {0, 0}, {0, 0});
  EXPECT_FALSE(lf0_rmse(silent, silent).has_value());
}

TEST(MetricReport, SelfEvaluationAndMacroAverage) {
  const auto a = seq({-1, 0.5f, 1, 2}, {1, 1, 1, 1}, {0.3f, -1, 2, 0}, {1, 0, -1, 0.5f});
  const auto self = metric_report({a, a}, {a, a});
  EXPECT_NEAR(*self.lf0_corr, 1.0, 1e-9);
  EXPECT_NEAR(*self.dur_corr, 1.0, 1e-9);
  EXPECT_NEAR(*self.energy_corr, 1.0, 1e-9);
  EXPECT_EQ(*self.lf0_rmse, 0.0);
  auto neg = a;
  for (auto& v : neg) v.lf0_z = -v.lf0_z;
  const auto constant = seq({1, 1, 1, 1}, {1, 1, 1, 1}, {0.3f, -1, 2, 0}, {1, 0, -1, 0.5f});
  const auto mixed = metric_report({a, neg, constant}, {a, a, a});
  EXPECT_NEAR(*mixed.lf0_corr, 0.0, 1e-9);
  EXPECT_EQ(mixed.n_lf0, 2u);
  EXPECT_EQ(mixed.n_utterances, 3u);
  EXPECT_THROW(metric_report({}, {}), InputError);
}

TEST(MetricReport, ColumnOrderAndAbsentValues) {
  EXPECT_EQ(report_header(), "model_name lf0_corr dur_corr energy_corr lf0_rmse");
  ProsodyMetricReport r;
  r.lf0_corr = 0.81234;
  r.dur_corr = -0.5;
  r.lf0_rmse = 0.237;
  EXPECT_EQ(format_report_row("proposed", r), "proposed 0.812 -0.500 NA 0.237");
}

TEST(Directionality, CountsWinsPerStyle) {
  EvaluationResult r;
  auto add = [&](StyleId sty, std::vector<std::optional<double>> by_style, std::optional<double> neutral) {
    TransferCase c;
    c.sty = sty;
    c.lf0_corr_by_style = std::move(by_style);
    c.lf0_corr_target_neutral = neutral;
    r.cases.push_back(c);
  };
  add(1, {0.1, 0.9, 0.2}, 0.3);           // wins both
  add(1, {0.95, 0.9, 0.2}, 0.3);          // beats neutral, loses to style 0
  add(1, {0.1, 0.9, std::nullopt}, 0.3);  // undefined rival counts against
  add(2, {0.1, 0.2, 0.5}, 0.6);           // loses to neutral
  add(2, {0.1, 0.2, std::nullopt}, 0.0);  // own undefined
  const auto d = directionality(r);
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(d[0].sty, 1u);
  EXPECT_EQ(d[0].n_cases, 3u);
  EXPECT_EQ(d[0].beats_target_neutral, 3u);
  EXPECT_EQ(d[0].beats_every_style, 1u);
  EXPECT_EQ(d[1].n_cases, 2u);
  EXPECT_EQ(d[1].beats_target_neutral, 0u);
  EXPECT_EQ(d[1].beats_every_style, 1u);
}

TEST(Alignment, FollowsDiagonalAttention) {
  const std::size_t frames = 7, phones = 3;
  std::vector<float> att(frames * phones, 0.05f);
  const std::size_t owner[frames] = {0, 0, 1, 1, 1, 2, 2};
  for (std::size_t t = 0; t < frames; ++t) att[t * phones + owner[t]] = 0.9f;
  const auto segs = attention_alignment(att, frames, phones);
  ASSERT_EQ(segs.size(), 3u);
  EXPECT_EQ(segs[0].start_frame, 0u);
  EXPECT_EQ(segs[0].end_frame, 2u);
  EXPECT_EQ(segs[1].end_frame, 5u);
  EXPECT_EQ(segs[2].end_frame, 7u);
}

TEST(Alignment, EveryPhoneGetsAFrame) {
  const std::size_t frames = 5, phones = 4;
  std::vector<float> att(frames * phones, 0.0f);
  for (std::size_t t = 0; t < frames; ++t) att[t * phones] = 1.0f;  // attention stuck on phone 0
  const auto segs = attention_alignment(att, frames, phones);
  ASSERT_EQ(segs.size(), phones);
  for (std::size_t p = 0; p < phones; ++p) EXPECT_GE(segs[p].frames(), 1u);
  EXPECT_EQ(segs.back().end_frame, frames);
  EXPECT_THROW(attention_alignment(std::vector<float>(6, 0.5f), 2, 3), AlignmentError);
}

TEST(Quantize, ClampsVuvAndRoundsToText) {
  const Tensor<float> p({1, 4}, {0.1234567f, 1.2f, -0.0000004f, 2.5f});
  const auto q = quantize_prosody(p);
  EXPECT_EQ(q.data()[0], 0.123457f);
  EXPECT_EQ(q.data()[1], 1.0f);
  EXPECT_EQ(q.data()[2], 0.0f);
  EXPECT_EQ(q.data()[3], 2.5f);
  EXPECT_TRUE(same_bits(quantize_prosody(q), q));
}

TEST(Transfer, IdentityCollapsesToSynthesis) {
  const auto m = tiny_model();
  const Network<float> net(m, init_params(m));
  for (bool quantize : {false, true}) {
    const SynthesisOptions opt{12, quantize};
    const auto t = transfer(net, {0, 2, 0, kText}, opt);
    const auto s = synthesize(net, kText, 0, 2, opt);
    EXPECT_TRUE(same_bits(t.prosody, s.prosody));
    EXPECT_TRUE(same_bits(t.decoded.mel_post, s.decoded.mel_post));
    EXPECT_TRUE(same_bits(t.decoded.stop_logits, s.decoded.stop_logits));
  }
}

TEST(Transfer, ProsodyDependsOnlyOnSource) {
  const auto m = tiny_model();
  const auto params = init_params(m);
  const Network<float> net(m, params);
  const auto to_b = transfer(net, {0, 1, 1, kText}, {8, false});
  const auto to_a = transfer(net, {0, 1, 0, kText}, {8, false});
  EXPECT_TRUE(same_bits(to_b.prosody, to_a.prosody));
  const auto direct = net.prosody_bottleneck(net.combine_speaker_style(net.encode_text(kText), 0, 1));
  EXPECT_TRUE(same_bits(to_b.prosody, direct));
  EXPECT_FALSE(same_bits(to_b.decoded.mel_post, to_a.decoded.mel_post));
}

TEST(Transfer, EncodesTextOnce) {
  const auto m = tiny_model();
  Network<float> net(m, init_params(m));
  net.reset_encode_calls();
  transfer(net, {0, 3, 1, kText}, {6, false});
  EXPECT_EQ(net.encode_calls(), 1u);
}

TEST(Transfer, RejectsBadIds) {
  const auto m = tiny_model();
  const Network<float> net(m, init_params(m));
  EXPECT_THROW(transfer(net, {0, 1, 2, kText}, {4, false}), InputError);
  EXPECT_THROW(transfer(net, {0, 4, 1, kText}, {4, false}), InputError);
  EXPECT_THROW(transfer(net, {-1, 1, 1, kText}, {4, false}), InputError);
  EXPECT_THROW(transfer(net, {0, 1, 1, {}}, {4, false}), InputError);
}

class ClassifierTest : public ::testing::Test {
 protected:
  static const Corpus& corpus() {
    static const Corpus c = [] {
      SyntheticSpec s;
      s.utts_per_cell = 5;
      s.test_utterances = 10;
      return generate_corpus(s);
    }();
    return c;
  }
  static std::vector<LabelledMel> labelled(bool test) {
    std::vector<LabelledMel> out;
    for (const auto* u : corpus().split(test)) out.push_back({&u->mel, u->spk});
    return out;
  }
};

TEST_F(ClassifierTest, DistributionSumsToOneAndIsDeterministic) {
  const auto c = init_speaker_classifier({});
  const auto& mel = corpus().utterances.front().mel;
  const auto a = classify_speaker(c, mel);
  const auto b = classify_speaker(c, mel);
  ASSERT_EQ(a.distribution.size(), 2u);
  EXPECT_NEAR(std::accumulate(a.distribution.begin(), a.distribution.end(), 0.0), 1.0, 1e-5);
  EXPECT_EQ(a.speaker, b.speaker);
  EXPECT_EQ(a.distribution, b.distribution);
  EXPECT_EQ(a.probability, a.distribution[static_cast<std::size_t>(a.speaker)]);
}

TEST_F(ClassifierTest, UntrainedIsNearChance) {
  std::vector<LabelledMel> balanced;
  std::size_t per[2] = {0, 0};
  for (const auto& u : corpus().utterances) {
    if (per[u.spk] < 25) balanced.push_back({&u.mel, u.spk}), ++per[u.spk];
  }
  ASSERT_EQ(balanced.size(), 50u);
  const double acc = classification_accuracy(init_speaker_classifier({}), balanced);
  EXPECT_NEAR(acc, 50.0, 15.0);
}

TEST_F(ClassifierTest, TrainedSeparatesSpeakers) {
  const auto full = generate_corpus(SyntheticSpec{});
  std::vector<LabelledMel> train_set, test_set;
  for (const auto& u : full.utterances) (u.test ? test_set : train_set).push_back({&u.mel, u.spk});
  const auto c = train_speaker_classifier(train_set, {});
  EXPECT_GE(classification_accuracy(c, test_set), 95.0);
}

TEST_F(ClassifierTest, RejectsShortMelsAndSingleSpeaker) {
  const auto c = init_speaker_classifier({});
  MelSpectrogramData short_mel{ClassifierConfig::kMinFrames - 1, 20,
                               std::vector<float>((ClassifierConfig::kMinFrames - 1) * 20, 0.0f)};
  EXPECT_THROW(classify_speaker(c, short_mel), InputError);
  ClassifierConfig one;
  one.n_speakers = 1;
  EXPECT_THROW(init_speaker_classifier(one), ConfigError);
  std::vector<LabelledMel> only_a;
  for (const auto& l : labelled(false)) {
    if (l.speaker == 0) only_a.push_back(l);
  }
  EXPECT_THROW(train_speaker_classifier(only_a, {}), ConfigError);
}
