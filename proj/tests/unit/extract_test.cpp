#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "pbtts/error.hpp"
#include "pbtts/extract.hpp"

using namespace pbtts;

namespace {

std::vector<float> sine(double hz, double amp, std::size_t n, double sr = 16000.0) {
  std::vector<float> x(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = static_cast<float>(amp * std::sin(2.0 * std::numbers::pi * hz * static_cast<double>(i) / sr));
  }
  return x;
}

}  // namespace

TEST(Pitch, SineAt220IsVoicedWithin2Hz) {
  PitchConfig cfg;
  const auto x = sine(220.0, 0.5, 16000);
  const auto track = estimate_f0(x, cfg);
  ASSERT_EQ(track.f0_hz.size(), frame_count(x.size(), cfg.hop));
  std::size_t interior = 0;
  for (std::size_t t = 0; t * cfg.hop + cfg.frame_len <= x.size(); ++t, ++interior) {
    EXPECT_TRUE(track.voiced[t]) << "frame " << t;
    EXPECT_NEAR(track.f0_hz[t], 220.0, 2.0) << "frame " << t;
  }
  EXPECT_GT(interior, 50u);
}

TEST(Pitch, SweepOfFrequencies) {
  PitchConfig cfg;
  for (double hz : {80.0, 130.0, 310.0, 450.0}) {
    const auto x = sine(hz, 0.3, 8000);
    const auto track = estimate_f0(x, cfg);
    EXPECT_TRUE(track.voiced[4]);
    EXPECT_NEAR(track.f0_hz[4], hz, 0.01 * hz) << hz;
  }
}

TEST(Pitch, SilenceIsUnvoiced) {
  const std::vector<float> x(8000, 0.0f);
  const auto track = estimate_f0(x, PitchConfig{});
  for (std::size_t t = 0; t < track.f0_hz.size(); ++t) {
    EXPECT_FALSE(track.voiced[t]);
    EXPECT_EQ(track.f0_hz[t], 0.0f);
  }
}

TEST(Pitch, WhiteNoiseMostlyUnvoiced) {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<float> u(-0.1f, 0.1f);
  std::vector<float> x(32000);
  for (auto& v : x) v = u(rng);
  const auto track = estimate_f0(x, PitchConfig{});
  std::size_t unvoiced = 0;
  for (bool v : track.voiced) unvoiced += v ? 0 : 1;
  EXPECT_GE(static_cast<double>(unvoiced), 0.9 * static_cast<double>(track.voiced.size()));
}

TEST(Pitch, EmptySignalGivesEmptyTrack) {
  const auto track = estimate_f0(std::vector<float>{}, PitchConfig{});
  EXPECT_TRUE(track.f0_hz.empty());
}

TEST(Pitch, InvalidBandRejected) {
  PitchConfig cfg;
  cfg.fmin = 600.0;
  EXPECT_THROW(estimate_f0(sine(220, 0.5, 4000), cfg), ConfigError);
  cfg.fmin = 50.0;
  cfg.fmax = 9000.0;
  EXPECT_THROW(estimate_f0(sine(220, 0.5, 4000), cfg), ConfigError);
}

TEST(Energy, ZeroConstantAndSine) {
  EXPECT_EQ(frame_energy(std::vector<float>(3000, 0.0f), 1024, 256), std::vector<float>(12, 0.0f));
  const auto c = frame_energy(std::vector<float>(4096, -0.3f), 1024, 256);
  for (std::size_t t = 0; t * 256 + 1024 <= 4096; ++t) EXPECT_NEAR(c[t], 0.3f, 1e-6f);
  // 1024 samples span ~14 periods of 220 Hz.
  const auto s = frame_energy(sine(220.0, 0.8, 8000), 1024, 256);
  for (std::size_t t = 0; t * 256 + 1024 <= 8000; ++t) EXPECT_NEAR(s[t], 0.8 / std::sqrt(2.0), 0.02 * 0.8 / std::sqrt(2.0));
}

TEST(Mel, SilenceHitsFloor) {
  MelConfig cfg;
  cfg.n_mels = 20;
  const auto m = mel_spectrogram(std::vector<float>(5000, 0.0f), cfg);
  ASSERT_GT(m.frames, 0u);
  for (float v : m.values) EXPECT_FLOAT_EQ(v, std::log(1e-5f));
}

TEST(Mel, FrameArithmetic) {
  MelConfig cfg;
  for (std::size_t len : {1024u, 1025u, 1280u, 5000u}) {
    EXPECT_EQ(mel_spectrogram(std::vector<float>(len, 0.0f), cfg).frames, 1 + (len - 1024) / 256);
  }
  EXPECT_EQ(mel_spectrogram(std::vector<float>(1000, 0.0f), cfg).frames, 0u);
}

TEST(Mel, SineArgmaxMatchesNearestCentre) {
  MelConfig cfg;
  cfg.n_mels = 40;
  // Centres computed here with the HTK formula directly.
  std::vector<double> centres;
  const double lo = 0.0, hi = 2595.0 * std::log10(1.0 + 8000.0 / 700.0);
  for (std::size_t i = 1; i <= cfg.n_mels; ++i) {
    const double m = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(cfg.n_mels + 1);
    centres.push_back(700.0 * (std::pow(10.0, m / 2595.0) - 1.0));
  }
  std::size_t nearest = 0;
  for (std::size_t i = 1; i < centres.size(); ++i) {
    if (std::abs(centres[i] - 440.0) < std::abs(centres[nearest] - 440.0)) nearest = i;
  }
  const auto m = mel_spectrogram(sine(440.0, 0.5, 8000), cfg);
  for (std::size_t t = 0; t < m.frames; ++t) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < cfg.n_mels; ++c) {
      if (m.at(t, c) > m.at(t, best)) best = c;
    }
    EXPECT_EQ(best, nearest) << "frame " << t;
  }
}

TEST(Mel, InvalidConfigRejected) {
  MelConfig cfg;
  cfg.n_fft = 1000;
  EXPECT_THROW(mel_spectrogram(std::vector<float>(2000), cfg), ConfigError);
  cfg = MelConfig{};
  cfg.n_mels = 3;
  EXPECT_THROW(mel_spectrogram(std::vector<float>(2000), cfg), ConfigError);
  cfg = MelConfig{};
  cfg.fmax = 9000.0;
  EXPECT_THROW(mel_spectrogram(std::vector<float>(2000), cfg), ConfigError);
}

TEST(Aggregate, MixedSegment) {
  FrameFeatures f;
  f.f0_hz = {200, 200, 0, 200, 0, 150, 150};
  f.voiced = {true, true, false, true, false, true, true};
  f.energy_rms = {1, 1, 1, 1, 1, 2, 4};
  const std::vector<AlignmentSegment> align = {{0, 0, 5}, {1, 5, 7}};
  const auto raw = aggregate_to_phone(f, align, "u1");
  ASSERT_EQ(raw.size(), 2u);
  EXPECT_NEAR(raw[0].lf0_mean, std::log(200.0), 1e-12);
  EXPECT_EQ(raw[0].vuv, 1.0f);
  EXPECT_DOUBLE_EQ(raw[0].voiced_fraction, 0.6);
  EXPECT_DOUBLE_EQ(raw[0].duration_frames, 5.0);
  EXPECT_DOUBLE_EQ(raw[1].energy_mean, 3.0);
  EXPECT_DOUBLE_EQ(raw[0].duration_frames + raw[1].duration_frames, 7.0);
}

TEST(Aggregate, UnvoicedPhone) {
  FrameFeatures f;
  f.f0_hz = {0, 0, 0};
  f.voiced = {false, false, false};
  f.energy_rms = {0.1f, 0.1f, 0.1f};
  const std::vector<AlignmentSegment> align = {{3, 0, 3}};
  const auto raw = aggregate_to_phone(f, align, "u");
  EXPECT_EQ(raw[0].vuv, 0.0f);
  EXPECT_EQ(raw[0].lf0_mean, 0.0);
}

TEST(Aggregate, AlignmentErrorsNameUtterance) {
  FrameFeatures f;
  f.f0_hz.assign(4, 0.0f);
  f.voiced.assign(4, false);
  f.energy_rms.assign(4, 0.0f);
  const std::vector<AlignmentSegment> overrun = {{0, 0, 2}, {1, 2, 6}};
  try {
    aggregate_to_phone(f, overrun, "utt_17");
    FAIL();
  } catch (const AlignmentError& e) {
    EXPECT_NE(std::string(e.what()).find("utt_17"), std::string::npos);
  }
  const std::vector<AlignmentSegment> gap = {{0, 0, 1}, {1, 2, 3}};
  EXPECT_THROW(aggregate_to_phone(f, gap, "u"), AlignmentError);
  const std::vector<AlignmentSegment> empty_seg = {{0, 1, 1}};
  EXPECT_THROW(aggregate_to_phone(f, empty_seg, "u"), AlignmentError);
}

TEST(Normalize, TwoPhoneDurations) {
  RawPhoneFeatures a{std::log(100.0), 1.0, 1.0f, 4.0, 0.1};
  RawPhoneFeatures b{std::log(200.0), 1.0, 1.0f, 16.0, 0.3};
  const auto n = normalize_global({{a, b}});
  EXPECT_NEAR(n.utterances[0][0].dur_z, -1.0f, 1e-6f);
  EXPECT_NEAR(n.utterances[0][1].dur_z, 1.0f, 1e-6f);
  EXPECT_NEAR(n.stats.dur_mean, 0.5 * (std::log(4.0) + std::log(16.0)), 1e-12);
}

TEST(Normalize, ZScoreAndUnvoicedConvention) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::vector<RawPhoneFeatures>> corpus(6);
  for (auto& utt : corpus) {
    for (int p = 0; p < 9; ++p) {
      RawPhoneFeatures r;
      r.vuv = u(rng) < 0.7 ? 1.0f : 0.0f;
      r.voiced_fraction = r.vuv;
      r.lf0_mean = r.vuv > 0 ? std::log(100.0 + 200.0 * u(rng)) : 0.0;
      r.duration_frames = 2.0 + std::floor(10.0 * u(rng));
      r.energy_mean = 0.05 + u(rng);
      utt.push_back(r);
    }
  }
  const auto n = normalize_global(corpus);
  double m = 0.0, m2 = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    for (std::size_t p = 0; p < corpus[i].size(); ++p) {
      const auto& z = n.utterances[i][p];
      if (corpus[i][p].vuv > 0) {
        m += z.lf0_z;
        m2 += static_cast<double>(z.lf0_z) * z.lf0_z;
        ++count;
      } else {
        EXPECT_EQ(z.lf0_z, 0.0f);
        EXPECT_EQ(z.vuv, 0.0f);
      }
      const auto back = denormalize_phone(z, n.stats);
      EXPECT_NEAR(back.lf0_mean, corpus[i][p].lf0_mean, 1e-5);
      EXPECT_NEAR(back.duration_frames, corpus[i][p].duration_frames, 1e-5);
      EXPECT_NEAR(back.energy_mean, corpus[i][p].energy_mean, 1e-5);
      EXPECT_EQ(back.vuv, corpus[i][p].vuv);
    }
  }
  m /= static_cast<double>(count);
  EXPECT_LT(std::abs(m), 1e-6);
  EXPECT_NEAR(std::sqrt(m2 / static_cast<double>(count) - m * m), 1.0, 1e-4);
}

TEST(Normalize, DegenerateCorpusRejected) {
  RawPhoneFeatures a{std::log(100.0), 1.0, 1.0f, 4.0, 0.1};
  EXPECT_THROW(normalize_global({{a}}), DegenerateCorpusError);
  EXPECT_THROW(normalize_global({{a, a}}), DegenerateCorpusError);
}

TEST(ProsodyVectorTest, IndexOrder) {
  ProsodyVector p{1, 2, 3, 4};
  EXPECT_EQ(p[kLf0], 1);
  EXPECT_EQ(p[kVuv], 2);
  EXPECT_EQ(p[kDur], 3);
  EXPECT_EQ(p[kEnergy], 4);
  EXPECT_THROW(p[4], InputError);
}
