#include "pbtts/extract.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numbers>

#include "pbtts/error.hpp"

namespace pbtts {

float ProsodyVector::operator[](std::size_t i) const {
  switch (i) {
    case kLf0: return lf0_z;
    case kVuv: return vuv;
    case kDur: return dur_z;
    case kEnergy: return energy_z;
    default: throw InputError("prosody feature index " + std::to_string(i) + " out of range");
  }
}

std::size_t frame_count(std::size_t samples, std::size_t hop) {
  if (hop == 0) throw ConfigError("hop must be positive");
  return (samples + hop - 1) / hop;
}

namespace {

std::vector<double> frame_window(std::span<const float> samples, std::size_t start, std::size_t len) {
  std::vector<double> w(len, 0.0);
  for (std::size_t i = 0; i < len && start + i < samples.size(); ++i) w[i] = samples[start + i];
  return w;
}

double rms(const std::vector<double>& x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return std::sqrt(s / static_cast<double>(x.size()));
}

}  // namespace

PitchTrack estimate_f0(std::span<const float> samples, const PitchConfig& config) {
  if (!(config.fmin > 0.0 && config.fmin < config.fmax && config.fmax < config.sample_rate / 2.0)) {
    throw ConfigError("estimate_f0: need 0 < fmin < fmax < sample_rate/2");
  }
  if (config.frame_len < 2) throw ConfigError("estimate_f0: frame_len must be at least 2");
  PitchTrack track;
  const std::size_t frames = frame_count(samples.size(), config.hop);
  track.f0_hz.assign(frames, 0.0f);
  track.voiced.assign(frames, false);
  const std::size_t n = config.frame_len;
  const auto min_lag = static_cast<std::size_t>(std::floor(config.sample_rate / config.fmax));
  const auto max_lag = std::min(n - 2, static_cast<std::size_t>(std::ceil(config.sample_rate / config.fmin)));
  if (min_lag < 1 || min_lag + 2 > max_lag) return track;

  for (std::size_t t = 0; t < frames; ++t) {
    auto x = frame_window(samples, t * config.hop, n);
    if (rms(x) < config.silence_rms) continue;
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(n);
    for (double& v : x) v -= mean;

    // Normalized autocorrelation over the admissible lag range.
    std::vector<double> r(max_lag + 2, 0.0);
    for (std::size_t lag = min_lag - 1; lag <= max_lag + 1 && lag < n; ++lag) {
      double cross = 0.0, e0 = 0.0, e1 = 0.0;
      for (std::size_t i = 0; i + lag < n; ++i) {
        cross += x[i] * x[i + lag];
        e0 += x[i] * x[i];
        e1 += x[i + lag] * x[i + lag];
      }
      const double denom = std::sqrt(e0 * e1);
      r[lag] = denom > 0.0 ? cross / denom : 0.0;
    }
    double best = -1.0;
    for (std::size_t lag = min_lag; lag <= max_lag; ++lag) best = std::max(best, r[lag]);
    if (best < config.voicing_threshold) continue;
    // Shortest lag that is a local maximum close to the global peak; avoids
    // picking a sub-harmonic multiple of the period.
    std::size_t pick = 0;
    for (std::size_t lag = min_lag; lag <= max_lag; ++lag) {
      if (r[lag] >= 0.9 * best && r[lag] >= r[lag - 1] && r[lag] >= r[lag + 1]) {
        pick = lag;
        break;
      }
    }
    if (pick == 0) continue;
    const double a = r[pick - 1], b = r[pick], c = r[pick + 1];
    const double curvature = a - 2.0 * b + c;
    const double delta = curvature != 0.0 ? 0.5 * (a - c) / curvature : 0.0;
    const double period = static_cast<double>(pick) + std::clamp(delta, -0.5, 0.5);
    track.f0_hz[t] = static_cast<float>(config.sample_rate / period);
    track.voiced[t] = true;
  }
  return track;
}

std::vector<float> frame_energy(std::span<const float> samples, std::size_t frame_len, std::size_t hop) {
  if (frame_len < 1) throw ConfigError("frame_energy: frame_len must be at least 1");
  const std::size_t frames = frame_count(samples.size(), hop);
  std::vector<float> out(frames);
  for (std::size_t t = 0; t < frames; ++t) out[t] = static_cast<float>(rms(frame_window(samples, t * hop, frame_len)));
  return out;
}

FrameFeatures extract_frame_features(std::span<const float> samples, const PitchConfig& config) {
  auto pitch = estimate_f0(samples, config);
  FrameFeatures f;
  f.f0_hz = std::move(pitch.f0_hz);
  f.voiced = std::move(pitch.voiced);
  f.energy_rms = frame_energy(samples, config.frame_len, config.hop);
  return f;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

namespace {

std::vector<double> mel_edges(std::size_t n_mels, double fmin, double fmax) {
  const double lo = hz_to_mel(fmin), hi = hz_to_mel(fmax);
  std::vector<double> edges(n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n_mels + 1));
  }
  return edges;
}

void validate_mel(const MelConfig& c) {
  if (c.n_fft < 2 || (c.n_fft & (c.n_fft - 1)) != 0) throw ConfigError("mel: n_fft must be a power of two");
  if (c.n_mels < 4) throw ConfigError("mel: n_mels must be at least 4");
  if (c.hop == 0) throw ConfigError("mel: hop must be positive");
  if (!(c.fmin >= 0.0 && c.fmin < c.fmax && c.fmax <= c.sample_rate / 2.0)) {
    throw ConfigError("mel: need 0 <= fmin < fmax <= sample_rate/2");
  }
}

std::mutex fftw_planner_mutex;

}  // namespace

std::vector<double> mel_center_frequencies(std::size_t n_mels, double fmin, double fmax) {
  auto edges = mel_edges(n_mels, fmin, fmax);
  return {edges.begin() + 1, edges.end() - 1};
}

std::vector<std::vector<float>> mel_filterbank(const MelConfig& config) {
  validate_mel(config);
  const auto edges = mel_edges(config.n_mels, config.fmin, config.fmax);
  const std::size_t bins = config.n_fft / 2 + 1;
  std::vector<std::vector<float>> bank(config.n_mels, std::vector<float>(bins, 0.0f));
  for (std::size_t m = 0; m < config.n_mels; ++m) {
    const double left = edges[m], centre = edges[m + 1], right = edges[m + 2];
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * config.sample_rate / static_cast<double>(config.n_fft);
      double w = 0.0;
      if (f > left && f <= centre) w = (f - left) / (centre - left);
      else if (f > centre && f < right) w = (right - f) / (right - centre);
      bank[m][k] = static_cast<float>(w);
    }
  }
  return bank;
}

MelSpectrogramData mel_spectrogram(std::span<const float> samples, const MelConfig& config) {
  validate_mel(config);
  MelSpectrogramData out;
  out.n_mels = config.n_mels;
  if (samples.size() < config.n_fft) return out;
  out.frames = 1 + (samples.size() - config.n_fft) / config.hop;
  out.values.resize(out.frames * config.n_mels);

  const std::size_t n = config.n_fft, bins = n / 2 + 1;
  const auto bank = mel_filterbank(config);
  std::vector<float> window(n);
  for (std::size_t i = 0; i < n; ++i) {
    window[i] = static_cast<float>(0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                                        static_cast<double>(n)));
  }
  float* in = fftwf_alloc_real(n);
  fftwf_complex* spec = fftwf_alloc_complex(bins);
  fftwf_plan plan;
  {
    std::lock_guard<std::mutex> lock(fftw_planner_mutex);
    plan = fftwf_plan_dft_r2c_1d(static_cast<int>(n), in, spec, FFTW_ESTIMATE);
  }
  std::vector<float> mag(bins);
  for (std::size_t t = 0; t < out.frames; ++t) {
    for (std::size_t i = 0; i < n; ++i) in[i] = samples[t * config.hop + i] * window[i];
    fftwf_execute(plan);
    for (std::size_t k = 0; k < bins; ++k) mag[k] = std::hypot(spec[k][0], spec[k][1]);
    for (std::size_t m = 0; m < config.n_mels; ++m) {
      double e = 0.0;
      for (std::size_t k = 0; k < bins; ++k) e += static_cast<double>(bank[m][k]) * mag[k];
      out.values[t * config.n_mels + m] = std::log(std::max(static_cast<float>(e), kMelFloor));
    }
  }
  {
    std::lock_guard<std::mutex> lock(fftw_planner_mutex);
    fftwf_destroy_plan(plan);
  }
  fftwf_free(in);
  fftwf_free(spec);
  return out;
}

void validate_alignment(std::span<const AlignmentSegment> alignment, std::size_t total_frames,
                        const std::string& utt_id) {
  if (alignment.empty()) throw AlignmentError("utterance " + utt_id + ": empty alignment");
  for (std::size_t i = 0; i < alignment.size(); ++i) {
    const auto& s = alignment[i];
    if (s.start_frame >= s.end_frame) {
      throw AlignmentError("utterance " + utt_id + ": segment " + std::to_string(i) + " is empty or reversed");
    }
    if (i > 0 && s.start_frame != alignment[i - 1].end_frame) {
      throw AlignmentError("utterance " + utt_id + ": segment " + std::to_string(i) +
                           " is not contiguous with its predecessor");
    }
  }
  if (alignment.back().end_frame > total_frames) {
    throw AlignmentError("utterance " + utt_id + ": alignment ends at frame " +
                         std::to_string(alignment.back().end_frame) + " but only " + std::to_string(total_frames) +
                         " frames exist");
  }
}

std::vector<RawPhoneFeatures> aggregate_to_phone(const FrameFeatures& frames,
                                                 std::span<const AlignmentSegment> alignment,
                                                 const std::string& utt_id) {
  validate_alignment(alignment, frames.frames(), utt_id);
  std::vector<RawPhoneFeatures> out;
  out.reserve(alignment.size());
  for (const auto& seg : alignment) {
    RawPhoneFeatures r;
    std::size_t voiced = 0;
    double lf0 = 0.0, energy = 0.0;
    for (std::size_t t = seg.start_frame; t < seg.end_frame; ++t) {
      if (frames.voiced[t] && frames.f0_hz[t] > 0.0f) {
        ++voiced;
        lf0 += std::log(static_cast<double>(frames.f0_hz[t]));
      }
      energy += frames.energy_rms[t];
    }
    const double len = static_cast<double>(seg.frames());
    r.lf0_mean = voiced > 0 ? lf0 / static_cast<double>(voiced) : 0.0;
    r.voiced_fraction = static_cast<double>(voiced) / len;
    r.vuv = r.voiced_fraction >= 0.5 ? 1.0f : 0.0f;
    r.duration_frames = len;
    r.energy_mean = energy / len;
    out.push_back(r);
  }
  return out;
}

namespace {

std::pair<double, double> population_stats(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - m) * (x - m);
  return {m, std::sqrt(var / static_cast<double>(v.size()))};
}

}  // namespace

NormalizedCorpus normalize_global(const std::vector<std::vector<RawPhoneFeatures>>& corpus) {
  std::vector<double> lf0, dur, energy;
  for (const auto& utt : corpus) {
    for (const auto& p : utt) {
      if (p.vuv >= 0.5f) lf0.push_back(p.lf0_mean);
      if (p.duration_frames <= 0.0) throw DegenerateCorpusError("normalize_global: non-positive phone duration");
      dur.push_back(std::log(p.duration_frames));
      energy.push_back(p.energy_mean);
    }
  }
  if (lf0.size() < 2) throw DegenerateCorpusError("normalize_global: need at least two voiced phones");
  NormalizedCorpus out;
  auto& s = out.stats;
  std::tie(s.lf0_mean, s.lf0_std) = population_stats(lf0);
  std::tie(s.dur_mean, s.dur_std) = population_stats(dur);
  std::tie(s.energy_mean, s.energy_std) = population_stats(energy);
  if (!(s.lf0_std > 0.0)) throw DegenerateCorpusError("normalize_global: lf0 has zero variance");
  if (!(s.dur_std > 0.0)) throw DegenerateCorpusError("normalize_global: duration has zero variance");
  if (!(s.energy_std > 0.0)) throw DegenerateCorpusError("normalize_global: energy has zero variance");
  for (const auto& utt : corpus) {
    ProsodySequence seq;
    seq.reserve(utt.size());
    for (const auto& p : utt) seq.push_back(normalize_phone(p, s));
    out.utterances.push_back(std::move(seq));
  }
  return out;
}

ProsodyVector normalize_phone(const RawPhoneFeatures& raw, const NormStats& s) {
  ProsodyVector p;
  p.vuv = raw.vuv;
  p.lf0_z = raw.vuv >= 0.5f ? static_cast<float>((raw.lf0_mean - s.lf0_mean) / s.lf0_std) : 0.0f;
  p.dur_z = static_cast<float>((std::log(raw.duration_frames) - s.dur_mean) / s.dur_std);
  p.energy_z = static_cast<float>((raw.energy_mean - s.energy_mean) / s.energy_std);
  return p;
}

RawPhoneFeatures denormalize_phone(const ProsodyVector& p, const NormStats& s) {
  RawPhoneFeatures r;
  r.vuv = p.vuv >= 0.5f ? 1.0f : 0.0f;
  r.voiced_fraction = p.vuv;
  r.lf0_mean = r.vuv > 0.0f ? static_cast<double>(p.lf0_z) * s.lf0_std + s.lf0_mean : 0.0;
  r.duration_frames = std::exp(static_cast<double>(p.dur_z) * s.dur_std + s.dur_mean);
  r.energy_mean = static_cast<double>(p.energy_z) * s.energy_std + s.energy_mean;
  return r;
}

}  // namespace pbtts
