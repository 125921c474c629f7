#pragma once

#include <span>
#include <string>
#include <vector>

#include "pbtts/prosody.hpp"

namespace pbtts {

struct PitchConfig {
  double sample_rate = 16000.0;
  std::size_t frame_len = 1024;
  std::size_t hop = 256;
  double fmin = 50.0;
  double fmax = 500.0;
  double voicing_threshold = 0.45;
  double silence_rms = 1e-3;
};

struct MelConfig {
  double sample_rate = 16000.0;
  std::size_t n_fft = 1024;
  std::size_t hop = 256;
  std::size_t n_mels = 80;
  double fmin = 0.0;
  double fmax = 8000.0;
};

/// Log floor applied before natural-log compression.
inline constexpr float kMelFloor = 1e-5f;

/// Frame t covers samples [t*hop, t*hop + frame_len), zero-padded past the
/// end; a signal of n samples has ceil(n / hop) frames.
std::size_t frame_count(std::size_t samples, std::size_t hop);

struct PitchTrack {
  std::vector<float> f0_hz;
  std::vector<bool> voiced;
};

/// Normalized-autocorrelation pitch tracker with parabolic peak refinement.
PitchTrack estimate_f0(std::span<const float> samples, const PitchConfig& config);

std::vector<float> frame_energy(std::span<const float> samples, std::size_t frame_len, std::size_t hop);

FrameFeatures extract_frame_features(std::span<const float> samples, const PitchConfig& config);

double hz_to_mel(double hz);
double mel_to_hz(double mel);
/// Centre frequency of each triangular filter (HTK mel scale).
std::vector<double> mel_center_frequencies(std::size_t n_mels, double fmin, double fmax);
/// Filterbank weights [n_mels][n_fft/2 + 1].
std::vector<std::vector<float>> mel_filterbank(const MelConfig& config);

/// Log-mel spectrogram [frames * n_mels], frames = 1 + (n - n_fft) / hop
/// (no padding; zero frames when n < n_fft).
struct MelSpectrogramData {
  std::size_t frames = 0;
  std::size_t n_mels = 0;
  std::vector<float> values;

  float at(std::size_t t, std::size_t c) const { return values[t * n_mels + c]; }
};

MelSpectrogramData mel_spectrogram(std::span<const float> samples, const MelConfig& config);

/// Validates ordering/contiguity and that the last segment ends within
/// `total_frames`. Throws AlignmentError naming `utt_id`.
void validate_alignment(std::span<const AlignmentSegment> alignment, std::size_t total_frames,
                        const std::string& utt_id);

std::vector<RawPhoneFeatures> aggregate_to_phone(const FrameFeatures& frames,
                                                 std::span<const AlignmentSegment> alignment,
                                                 const std::string& utt_id);

struct NormalizedCorpus {
  NormStats stats;
  std::vector<ProsodySequence> utterances;
};

/// Corpus-global z-scoring. lf0 statistics come from voiced phones only and
/// unvoiced phones get lf0_z = 0; duration is z-scored in log domain.
NormalizedCorpus normalize_global(const std::vector<std::vector<RawPhoneFeatures>>& corpus);

ProsodyVector normalize_phone(const RawPhoneFeatures& raw, const NormStats& stats);
RawPhoneFeatures denormalize_phone(const ProsodyVector& p, const NormStats& stats);

}  // namespace pbtts
