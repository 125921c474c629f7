#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "pbtts/error.hpp"
#include "pbtts/grad_check.hpp"
#include "pbtts/model.hpp"
#include "pbtts/random.hpp"

using namespace pbtts;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.n_phones = 6;
  c.n_speakers = 2;
  c.n_styles = 3;
  c.d_model = 8;
  c.d_spk_sty_embed = 4;
  c.n_enc_blocks = 1;
  c.n_dec_blocks = 1;
  c.n_heads = 2;
  c.d_ff = 8;
  c.bottleneck_cnn_channels = 4;
  c.se_reduction = 2;
  c.agg_cnn_channels = 4;
  c.n_mels = 6;
  c.prenet_hidden = 4;
  c.postnet_channels = 4;
  c.max_phones = 16;
  c.max_decoder_frames = 40;
  return c;
}

Example tiny_example(const ModelConfig& c, std::uint64_t seed = 3) {
  Rng rng(seed);
  Example e;
  e.phones = {1, 4, 2};
  e.spk = 1;
  e.sty = 2;
  e.frames = 5;
  for (std::size_t i = 0; i < e.frames * c.n_mels; ++i) e.mel.push_back(static_cast<float>(rng.normal()));
  for (std::size_t i = 0; i < e.phones.size(); ++i) {
    e.prosody.push_back({static_cast<float>(rng.normal()), i == 1 ? 0.0f : 1.0f, static_cast<float>(rng.normal()),
                         static_cast<float>(rng.normal())});
  }
  return e;
}

Tensor<float> mel_tensor(const Example& e, std::size_t n_mels) { return Tensor<float>({e.frames, n_mels}, e.mel); }

void fill(Tensor<float>& t, std::initializer_list<float> v) {
  ASSERT_EQ(t.numel(), v.size());
  std::copy(v.begin(), v.end(), t.mutable_data().begin());
}

void zero(Tensor<float>& t) { std::fill(t.mutable_data().begin(), t.mutable_data().end(), 0.0f); }

std::vector<float> values(const Tensor<float>& t) { return {t.data().begin(), t.data().end()}; }

std::vector<float> row(const Tensor<float>& t, std::size_t r) {
  return {t.data().begin() + static_cast<std::ptrdiff_t>(r * t.cols()),
          t.data().begin() + static_cast<std::ptrdiff_t>((r + 1) * t.cols())};
}

double sigmoid_d(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST(Params, InitIsDeterministicAndGrouped) {
  const auto c = tiny_config();
  const auto a = init_params(c);
  const auto b = init_params(c);
  EXPECT_TRUE(params_identical(a, b));
  std::set<std::string> groups;
  for (const auto& p : a.entries()) groups.insert(p.group);
  EXPECT_EQ(groups, std::set<std::string>(parameter_groups().begin(), parameter_groups().end()));
  for (std::size_t i = 1; i < a.size(); ++i) EXPECT_LT(a.entries()[i - 1].name, a.entries()[i].name);

  auto other = c;
  other.init_seed = 18;
  EXPECT_FALSE(params_identical(a, init_params(other)));
}

TEST(Params, CloneIsDeep) {
  const auto a = init_params(tiny_config());
  auto b = a.clone();
  b.get("enc.embed").mutable_data()[0] += 1.0f;
  EXPECT_FALSE(params_identical(a, b));
}

TEST(Encoder, ShapeAndVocabulary) {
  const auto c = tiny_config();
  const auto p = init_params(c);
  const Network<float> net(c, p);
  const std::vector<PhoneId> phones = {0, 1, 2, 3, 4};
  const auto s = net.encode_text(phones);
  EXPECT_EQ(s.stage, Stage::kTextOnly);
  EXPECT_EQ(s.hidden.shape(), (Shape{5, c.d_model}));
  const std::vector<PhoneId> bad = {0, 6};
  EXPECT_THROW(net.encode_text(bad), InputError);
  EXPECT_THROW(net.encode_text(std::vector<PhoneId>{}), InputError);
}

TEST(Encoder, PositionEncodingMakesOrderMatter) {
  const auto c = tiny_config();
  const auto p = init_params(c);
  const Network<float> net(c, p);
  const auto ab = net.encode_text(std::vector<PhoneId>{1, 3});
  const auto ba = net.encode_text(std::vector<PhoneId>{3, 1});
  EXPECT_NE(row(ab.hidden, 0), row(ba.hidden, 1));
}

TEST(Encoder, IndependentOfSpeaker) {
  const auto c = tiny_config();
  const auto p = init_params(c);
  const Network<float> net(c, p);
  const std::vector<PhoneId> phones = {2, 0, 5};
  const auto enc = net.encode_text(phones);
  const auto before = values(enc.hidden);
  const auto s0 = net.combine_speaker_style(enc, 0, 1);
  const auto s1 = net.combine_speaker_style(enc, 1, 1);
  EXPECT_NE(values(s0.hidden), values(s1.hidden));
  EXPECT_EQ(values(enc.hidden), before);
  EXPECT_EQ(values(net.encode_text(phones).hidden), before);
}

TEST(Combine, ZeroStyleProjectionRemovesStyle) {
  const auto c = tiny_config();
  auto p = init_params(c);
  zero(p.get("proj.style.w"));
  zero(p.get("proj.style.b"));
  const Network<float> net(c, p);
  const auto enc = net.encode_text(std::vector<PhoneId>{1, 2, 3});
  const auto ref = values(net.combine_speaker_style(enc, 1, 0).hidden);
  for (StyleId s = 1; s < 3; ++s) EXPECT_EQ(values(net.combine_speaker_style(enc, 1, s).hidden), ref);
}

TEST(Combine, HandComputedSinglePhone) {
  auto c = tiny_config();
  c.d_model = 2;
  c.d_spk_sty_embed = 1;
  c.n_heads = 1;
  auto p = init_params(c);
  fill(p.get("spk.embed"), {0.5f, -2.0f});
  fill(p.get("sty.embed"), {0.25f, 1.5f, -1.0f});
  // [h0 h1 e] x W, W is 3x2 row-major.
  fill(p.get("proj.combine.w"), {1.0f, 2.0f, -1.0f, 0.5f, 3.0f, -2.0f});
  fill(p.get("proj.combine.b"), {0.1f, -0.2f});
  fill(p.get("proj.style.w"), {0.8f, -0.6f});
  fill(p.get("proj.style.b"), {0.05f, 0.3f});
  const Network<float> net(c, p);
  const EncoderState<float> enc{Stage::kTextOnly, Tensor<float>({1, 2}, {0.3f, -0.7f})};
  const auto out = net.combine_speaker_style(enc, 1, 2);

  const double h0 = 0.3, h1 = -0.7, e = -2.0, st = -1.0;
  const double y0 = h0 * 1.0 + h1 * -1.0 + e * 3.0 + 0.1 + std::tanh(st * 0.8 + 0.05);
  const double y1 = h0 * 2.0 + h1 * 0.5 + e * -2.0 - 0.2 + std::tanh(st * -0.6 + 0.3);
  EXPECT_EQ(out.stage, Stage::kSpeakerStyleCombined);
  EXPECT_NEAR(out.hidden.at(0, 0), y0, 1e-6);
  EXPECT_NEAR(out.hidden.at(0, 1), y1, 1e-6);
}

TEST(Combine, RejectsBadIds) {
  const auto c = tiny_config();
  const auto p = init_params(c);
  const Network<float> net(c, p);
  const auto enc = net.encode_text(std::vector<PhoneId>{1});
  EXPECT_THROW(net.combine_speaker_style(enc, 2, 0), InputError);
  EXPECT_THROW(net.combine_speaker_style(enc, 0, 3), InputError);
  EXPECT_THROW(net.combine_speaker_style(enc, -1, 0), InputError);
}

TEST(SqueezeExcite, ZeroWeightsHalveInput) {
  const auto c = tiny_config();
  auto p = init_params(c);
  for (const char* n : {"bottleneck.se.fc1.w", "bottleneck.se.fc1.b", "bottleneck.se.fc2.w", "bottleneck.se.fc2.b"}) {
    zero(p.get(n));
  }
  const Network<float> net(c, p);
  const Tensor<float> x({3, 4}, {1, -2, 3, 4, 0.5f, 6, -7, 8, 9, 10, 11, -12});
  const auto y = net.se_block(x);
  ASSERT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_FLOAT_EQ(y.data()[i], 0.5f * x.data()[i]);
}

TEST(SqueezeExcite, HandComputedTwoByTwo) {
  auto c = tiny_config();
  c.bottleneck_cnn_channels = 2;
  c.se_reduction = 2;
  auto p = init_params(c);
  fill(p.get("bottleneck.se.fc1.w"), {0.7f, -0.4f});  // [2,1]
  fill(p.get("bottleneck.se.fc1.b"), {0.1f});
  fill(p.get("bottleneck.se.fc2.w"), {1.5f, -0.8f});  // [1,2]
  fill(p.get("bottleneck.se.fc2.b"), {0.2f, 0.05f});
  const Network<float> net(c, p);
  const Tensor<float> x({2, 2}, {1.0f, 2.0f, 3.0f, -4.0f});
  const auto y = net.se_block(x);

  const double m0 = (1.0 + 3.0) / 2.0, m1 = (2.0 - 4.0) / 2.0;  // squeeze
  const double h = std::max(0.0, m0 * 0.7 + m1 * -0.4 + 0.1);  // excitation hidden + relu
  const double s0 = sigmoid_d(h * 1.5 + 0.2), s1 = sigmoid_d(h * -0.8 + 0.05);
  EXPECT_NEAR(y.at(0, 0), 1.0 * s0, 1e-6);
  EXPECT_NEAR(y.at(0, 1), 2.0 * s1, 1e-6);
  EXPECT_NEAR(y.at(1, 0), 3.0 * s0, 1e-6);
  EXPECT_NEAR(y.at(1, 1), -4.0 * s1, 1e-6);
}

TEST(Bottleneck, ShapeAndZeroParameters) {
  const auto c = tiny_config();
  auto p = init_params(c);
  {
    const Network<float> net(c, p);
    for (std::size_t n : {1u, 2u, 7u}) {
      std::vector<PhoneId> phones(n, 3);
      const auto pred = net.prosody_bottleneck(net.combine_speaker_style(net.encode_text(phones), 0, 0));
      EXPECT_EQ(pred.shape(), (Shape{n, kProsodyDim}));
    }
  }
  for (auto& e : p.entries()) {
    if (e.group == "bottleneck") zero(e.tensor);
  }
  const Network<float> net(c, p);
  const auto pred = net.prosody_bottleneck(net.combine_speaker_style(net.encode_text(std::vector<PhoneId>{1, 2}), 0, 1));
  for (float v : pred.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Bottleneck, ProsodyLossGradientMatchesFiniteDifferences) {
  const auto c = tiny_config();
  auto p32 = init_params(c);
  auto p64 = cast_params<double>(p32);
  const auto ex = tiny_example(c);
  std::vector<NamedTensor<float>> t32;
  std::vector<NamedTensor<double>> t64;
  for (auto& e : p32.entries()) {
    if (e.group == "bottleneck") t32.push_back({e.name, e.tensor});
  }
  for (auto& e : p64.entries()) {
    if (e.group == "bottleneck") t64.push_back({e.name, e.tensor});
  }
  p32.set_requires_grad(true);
  p64.set_requires_grad(true);
  const Network<float> n32(c, p32);
  const Network<double> n64(c, p64);
  auto loss = [&](const auto& net, auto tag) {
    using T = decltype(tag);
    const auto combined = net.combine_speaker_style(net.encode_text(ex.phones), ex.spk, ex.sty);
    return mse(net.prosody_bottleneck(combined), prosody_tensor<T>(ex.prosody));
  };
  const auto r = grad_check_mixed<float>([&] { return loss(n32, 0.0f); }, t32, [&] { return loss(n64, 0.0); }, t64,
                                         {.eps = 1e-5, .samples = 200});
  EXPECT_LT(r.max_relative_error, 1e-3);
}

TEST(Aggregate, ZeroProsodyAndBiasesIsIdentity) {
  const auto c = tiny_config();
  auto p = init_params(c);
  zero(p.get("agg.conv1.b"));
  zero(p.get("agg.conv2.b"));
  const Network<float> net(c, p);
  const auto combined = net.combine_speaker_style(net.encode_text(std::vector<PhoneId>{1, 2, 3, 4}), 1, 1);
  const auto out = net.aggregate_prosody(combined, Tensor<float>::zeros({4, kProsodyDim}));
  EXPECT_EQ(out.stage, Stage::kFullyAggregated);
  EXPECT_EQ(out.hidden.shape(), (Shape{4, c.d_model}));
  EXPECT_EQ(values(out.hidden), values(combined.hidden));
}

TEST(Aggregate, PerturbationStaysWithinReceptiveField) {
  const auto c = tiny_config();
  const auto p = init_params(c);
  const Network<float> net(c, p);
  const std::vector<PhoneId> phones = {0, 1, 2, 3, 4, 5, 0, 1, 2};
  const auto combined = net.combine_speaker_style(net.encode_text(phones), 0, 2);
  Rng rng(9);
  std::vector<float> pv(phones.size() * kProsodyDim);
  for (auto& v : pv) v = static_cast<float>(rng.normal());
  const auto base = net.aggregate_prosody(combined, Tensor<float>({phones.size(), kProsodyDim}, pv));
  const std::size_t j = 4;
  for (std::size_t k = 0; k < kProsodyDim; ++k) pv[j * kProsodyDim + k] += 1.0f;
  const auto moved = net.aggregate_prosody(combined, Tensor<float>({phones.size(), kProsodyDim}, pv));
  EXPECT_NE(row(base.hidden, j), row(moved.hidden, j));
  for (std::size_t r = 0; r < phones.size(); ++r) {
    const std::size_t dist = r > j ? r - j : j - r;
    if (dist > 2) EXPECT_EQ(row(base.hidden, r), row(moved.hidden, r)) << "row " << r;
  }
}

TEST(Aggregate, RowMismatchIsContractError) {
  const auto c = tiny_config();
  const auto p = init_params(c);
  const Network<float> net(c, p);
  const auto combined = net.combine_speaker_style(net.encode_text(std::vector<PhoneId>{1, 2, 3}), 0, 0);
  EXPECT_THROW(net.aggregate_prosody(combined, Tensor<float>::zeros({2, kProsodyDim})), ContractError);
}

TEST(Stages, WrongStageIsRejected) {
  const auto c = tiny_config();
  const auto p = init_params(c);
  const Network<float> net(c, p);
  const auto text = net.encode_text(std::vector<PhoneId>{1, 2, 3});
  const auto combined = net.combine_speaker_style(text, 0, 0);
  const auto aggregated = net.aggregate_prosody(combined, Tensor<float>::zeros({3, kProsodyDim}));
  const auto mel = Tensor<float>::zeros({4, c.n_mels});
  EXPECT_THROW(net.prosody_bottleneck(text), ContractError);
  EXPECT_THROW(net.prosody_bottleneck(aggregated), ContractError);
  EXPECT_THROW(net.aggregate_prosody(text, Tensor<float>::zeros({3, kProsodyDim})), ContractError);
  EXPECT_THROW(net.combine_speaker_style(combined, 0, 0), ContractError);
  EXPECT_THROW(net.decode_teacher_forced(combined, mel), ContractError);
  EXPECT_THROW(net.decode_autoregressive(text), ContractError);
  EXPECT_NO_THROW(net.decode_teacher_forced(aggregated, mel));
}

TEST(Decoder, TeacherForcedFrameCount) {
  const auto c = tiny_config();
  const auto p = init_params(c);
  const Network<float> net(c, p);
  const auto ex = tiny_example(c);
  const auto agg = net.aggregate_prosody(net.combine_speaker_style(net.encode_text(ex.phones), 0, 0),
                                         prosody_tensor<float>(ex.prosody));
  const auto out = net.decode_teacher_forced(agg, mel_tensor(ex, c.n_mels));
  EXPECT_EQ(out.frames(), ex.frames);
  EXPECT_EQ(out.mel_pre.shape(), (Shape{ex.frames, c.n_mels}));
  EXPECT_EQ(out.stop_logits.numel(), ex.frames);
  EXPECT_EQ(out.alignment.size(), ex.frames * ex.phones.size());
  EXPECT_THROW(net.decode_teacher_forced(agg, Tensor<float>::zeros({3, c.n_mels + 1})), InputError);
}

TEST(Decoder, CausalMask) {
  const auto c = tiny_config();
  const auto p = init_params(c);
  const Network<float> net(c, p);
  const auto ex = tiny_example(c);
  const auto agg = net.aggregate_prosody(net.combine_speaker_style(net.encode_text(ex.phones), 0, 0),
                                         prosody_tensor<float>(ex.prosody));
  const auto base = net.decode_teacher_forced(agg, mel_tensor(ex, c.n_mels));
  for (std::size_t t = 0; t < ex.frames; ++t) {
    auto mel = ex.mel;
    for (std::size_t k = 0; k < c.n_mels; ++k) mel[t * c.n_mels + k] += 3.0f;
    const auto moved = net.decode_teacher_forced(agg, Tensor<float>({ex.frames, c.n_mels}, mel));
    for (std::size_t r = 0; r <= t; ++r) {
      EXPECT_EQ(row(base.mel_pre, r), row(moved.mel_pre, r)) << "target frame " << t << " leaked into row " << r;
      EXPECT_EQ(base.stop_logits.data()[r], moved.stop_logits.data()[r]);
    }
    if (t + 1 < ex.frames) EXPECT_NE(row(base.mel_pre, t + 1), row(moved.mel_pre, t + 1));
  }
}

TEST(Decoder, AutoregressiveRespectsFrameBound) {
  const auto c = tiny_config();
  auto p = init_params(c);
  const auto ex = tiny_example(c);
  {
    const Network<float> net(c, p);
    const auto agg = net.aggregate_prosody(net.combine_speaker_style(net.encode_text(ex.phones), 0, 0),
                                           prosody_tensor<float>(ex.prosody));
    const auto out = net.decode_autoregressive(agg, 5);
    EXPECT_GE(out.frames(), 1u);
    EXPECT_LE(out.frames(), 5u);
  }
  fill(p.get("dec.stop_head.b"), {-50.0f});
  const Network<float> net(c, p);
  const auto agg = net.aggregate_prosody(net.combine_speaker_style(net.encode_text(ex.phones), 0, 0),
                                         prosody_tensor<float>(ex.prosody));
  const auto out = net.decode_autoregressive(agg, 5);
  EXPECT_EQ(out.frames(), 5u);
  EXPECT_TRUE(out.truncated);
  EXPECT_EQ(net.decode_autoregressive(agg).frames(), c.max_decoder_frames);
}

TEST(Decoder, AutoregressiveMatchesTeacherForcingOnItsOwnOutput) {
  const auto c = tiny_config();
  auto p = init_params(c);
  fill(p.get("dec.stop_head.b"), {-50.0f});
  const Network<float> net(c, p);
  const auto ex = tiny_example(c);
  const auto agg = net.aggregate_prosody(net.combine_speaker_style(net.encode_text(ex.phones), 1, 2),
                                         prosody_tensor<float>(ex.prosody));
  const auto ar = net.decode_autoregressive(agg, 9);
  const auto tf = net.decode_teacher_forced(agg, ar.mel_pre);
  for (std::size_t i = 0; i < ar.mel_pre.numel(); ++i) EXPECT_NEAR(ar.mel_pre.data()[i], tf.mel_pre.data()[i], 1e-5);
  for (std::size_t i = 0; i < ar.mel_post.numel(); ++i) EXPECT_NEAR(ar.mel_post.data()[i], tf.mel_post.data()[i], 1e-5);
  for (std::size_t i = 0; i < ar.alignment.size(); ++i) EXPECT_NEAR(ar.alignment[i], tf.alignment[i], 1e-5);
}

TEST(Loss, PerfectPrediction) {
  const Tensor<float> mel({2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor<float> stop({2, 1}, {-1e4f, 1e4f});
  const Tensor<float> pros({1, 4}, {0.5f, 1, -0.5f, 2});
  const auto l = compute_loss(mel, mel, mel, stop, pros, pros, 1.0, 1.0);
  EXPECT_EQ(l.l_spec.item(), 0.0f);
  EXPECT_EQ(l.l_prosody.item(), 0.0f);
  EXPECT_NEAR(l.l_stop.item(), 0.0f, 1e-6);
  EXPECT_NEAR(l.total.item(), 0.0f, 1e-6);
}

TEST(Loss, ZeroWeightsLeaveSpectrumOnly) {
  Rng rng(2);
  auto rnd = [&](Shape s) {
    std::vector<float> v(shape_numel(s));
    for (auto& x : v) x = static_cast<float>(rng.normal());
    return Tensor<float>(s, v);
  };
  const auto l = compute_loss(rnd({4, 3}), rnd({4, 3}), rnd({4, 3}), rnd({4, 1}), rnd({2, 4}), rnd({2, 4}), 0.0, 0.0);
  EXPECT_EQ(l.total.item(), l.l_spec.item());
  EXPECT_GT(l.l_stop.item(), 0.0f);
}

TEST(Loss, TwoFrameHandCase) {
  const Tensor<float> pred({2, 1}, {0, 0});
  const Tensor<float> target({2, 1}, {1, 1});
  const Tensor<float> stop({2, 1}, {0, 0});
  const Tensor<float> pros({1, 4}, {0, 0, 0, 0});
  const auto l = compute_loss(pred, pred, target, stop, pros, pros, 1.0, 1.0);
  EXPECT_FLOAT_EQ(l.l_spec.item(), 2.0f);  // 1.0 for each of the two heads
  // Both frames have logit 0 (BCE ln 2); weights 1 and T-1 = 1, mean over 2.
  EXPECT_NEAR(l.l_stop.item(), std::log(2.0), 1e-6);
}

TEST(Loss, StopTargets) {
  std::vector<double> labels, weights;
  stop_targets<double>(5, labels, weights);
  EXPECT_EQ(labels, (std::vector<double>{0, 0, 0, 0, 1}));
  EXPECT_EQ(weights, (std::vector<double>{1, 1, 1, 1, 4}));
  stop_targets<double>(1, labels, weights);
  EXPECT_EQ(weights, (std::vector<double>{1}));
}

TEST(Loss, ShapeMismatchIsInputError) {
  const auto a = Tensor<float>::zeros({2, 3});
  const auto b = Tensor<float>::zeros({3, 3});
  const auto s = Tensor<float>::zeros({2, 1});
  const auto p = Tensor<float>::zeros({1, 4});
  EXPECT_THROW(compute_loss(a, a, b, s, p, p, 1, 1), InputError);
  EXPECT_THROW(compute_loss(a, a, a, Tensor<float>::zeros({3, 1}), p, p, 1, 1), InputError);
  EXPECT_THROW(compute_loss(a, a, a, s, p, Tensor<float>::zeros({2, 4}), 1, 1), InputError);
}

TEST(ForwardTrain, FiniteNonNegativeAndDeterministic) {
  const auto c = tiny_config();
  const auto p = init_params(c);
  const Network<float> net(c, p);
  const auto ex = tiny_example(c);
  const auto a = net.forward_train(ex, 1.0, 1.0);
  const auto b = net.forward_train(ex, 1.0, 1.0);
  for (const auto* t : {&a.loss.l_spec, &a.loss.l_stop, &a.loss.l_prosody, &a.loss.total}) {
    EXPECT_TRUE(std::isfinite(t->item()));
    EXPECT_GE(t->item(), 0.0f);
  }
  EXPECT_EQ(a.loss.total.item(), b.loss.total.item());
  EXPECT_EQ(a.loss.l_spec.item(), b.loss.l_spec.item());
  EXPECT_EQ(a.loss.l_stop.item(), b.loss.l_stop.item());
  EXPECT_EQ(a.loss.l_prosody.item(), b.loss.l_prosody.item());
  EXPECT_EQ(a.prosody_pred.shape(), (Shape{ex.phones.size(), kProsodyDim}));
}

TEST(ForwardTrain, MisalignedTargetsAreInputErrors) {
  const auto c = tiny_config();
  const auto p = init_params(c);
  const Network<float> net(c, p);
  auto ex = tiny_example(c);
  ex.prosody.pop_back();
  EXPECT_THROW(net.forward_train(ex, 1, 1), InputError);
  ex = tiny_example(c);
  ex.frames = 4;
  EXPECT_THROW(net.forward_train(ex, 1, 1), InputError);
}

namespace {

double bottleneck_grad_norm(ProsodyFeed feed, double beta) {
  auto c = tiny_config();
  c.prosody_feed = feed;
  auto p = init_params(c);
  p.set_requires_grad(true);
  const Network<float> net(c, p);
  const auto ex = tiny_example(c);
  {
    Tape<float> tape;
    const auto r = net.forward_train(ex, 1.0, beta);
    tape.backward(r.loss.total);
  }
  double n = 0;
  for (const auto& e : p.entries()) {
    if (e.group != "bottleneck" || !e.tensor.has_grad()) continue;
    for (float g : e.tensor.grad()) n += static_cast<double>(g) * g;
  }
  return std::sqrt(n);
}

}  // namespace

TEST(ForwardTrain, GroundTruthFeedDetachesPrediction) {
  EXPECT_EQ(bottleneck_grad_norm(ProsodyFeed::kGroundTruth, 0.0), 0.0);
  EXPECT_GT(bottleneck_grad_norm(ProsodyFeed::kGroundTruth, 1.0), 0.0);
  EXPECT_GT(bottleneck_grad_norm(ProsodyFeed::kPredicted, 0.0), 0.0);
}

namespace {

// Moves every parameter off exact relu kinks (zero biases meet the zero go frame).
ParamStore<float> jittered_params(const ModelConfig& c) {
  auto p = init_params(c);
  Rng rng(21);
  for (auto& e : p.entries()) {
    for (auto& v : e.tensor.mutable_data()) v += static_cast<float>(0.05 * rng.normal());
  }
  return p;
}

template <typename T>
std::vector<NamedTensor<T>> named(ParamStore<T>& p) {
  std::vector<NamedTensor<T>> out;
  for (auto& e : p.entries()) out.push_back({e.name, e.tensor});
  return out;
}

}  // namespace

TEST(GradCheck, EndToEndCoversEveryGroup) {
  const auto c = tiny_config();
  auto p32 = jittered_params(c);
  auto p64 = cast_params<double>(p32);
  p32.set_requires_grad(true);
  p64.set_requires_grad(true);
  const Network<float> n32(c, p32);
  const Network<double> n64(c, p64);
  const auto ex = tiny_example(c);
  const auto r = grad_check_mixed<float>([&] { return n32.forward_train(ex, 1.0, 1.0).loss.total; }, named(p32),
                                         [&] { return n64.forward_train(ex, 1.0, 1.0).loss.total; }, named(p64),
                                         {.eps = 1e-5, .samples = 240});
  EXPECT_GE(r.coordinates.size(), 200u);
  std::set<std::string> groups;
  for (const auto& coord : r.coordinates) {
    for (const auto& e : p32.entries()) {
      if (e.name == coord.tensor) groups.insert(e.group);
    }
  }
  EXPECT_EQ(groups.size(), parameter_groups().size());
  for (const auto& coord : r.coordinates) {
    if (coord.relative_error >= 1e-3) {
      ADD_FAILURE() << coord.tensor << "[" << coord.index << "] " << coord.analytic << " vs " << coord.numeric;
    }
  }
  EXPECT_LT(r.max_relative_error, 1e-3);
}

TEST(GradCheck, EndToEndDoublePrecision) {
  const auto c = tiny_config();
  auto p64 = cast_params<double>(jittered_params(c));
  p64.set_requires_grad(true);
  const Network<double> n64(c, p64);
  const auto ex = tiny_example(c);
  const auto r = grad_check<double>([&] { return n64.forward_train(ex, 1.0, 1.0).loss.total; }, named(p64),
                                    {.eps = 1e-5, .samples = 240});
  EXPECT_GE(r.coordinates.size(), 200u);
  EXPECT_LT(r.max_relative_error, 1e-5);
}
