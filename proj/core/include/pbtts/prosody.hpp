#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

namespace pbtts {

using PhoneId = int;
using SpeakerId = int;
using StyleId = int;

/// Number of phone-level prosody features; the order is fixed everywhere.
inline constexpr std::size_t kProsodyDim = 4;

enum ProsodyFeature : std::size_t { kLf0 = 0, kVuv = 1, kDur = 2, kEnergy = 3 };

/// Normalized phone-level prosody: [lf0_z, vuv, dur_z, energy_z].
struct ProsodyVector {
  float lf0_z = 0.0f;
  float vuv = 0.0f;
  float dur_z = 0.0f;
  float energy_z = 0.0f;

  float operator[](std::size_t i) const;
  std::array<float, kProsodyDim> as_array() const { return {lf0_z, vuv, dur_z, energy_z}; }
  static ProsodyVector from_array(const std::array<float, kProsodyDim>& a) { return {a[0], a[1], a[2], a[3]}; }
  bool operator==(const ProsodyVector&) const = default;
};

using ProsodySequence = std::vector<ProsodyVector>;

struct AlignmentSegment {
  PhoneId phone = 0;
  std::size_t start_frame = 0;
  std::size_t end_frame = 0;  // exclusive

  std::size_t frames() const { return end_frame - start_frame; }
  bool operator==(const AlignmentSegment&) const = default;
};

struct FrameFeatures {
  std::vector<float> f0_hz;  // 0 where unvoiced
  std::vector<bool> voiced;
  std::vector<float> energy_rms;

  std::size_t frames() const { return f0_hz.size(); }
};

/// Un-normalized phone-level features, one per aligned phone.
struct RawPhoneFeatures {
  double lf0_mean = 0.0;        // mean log-Hz over voiced frames, 0 if none
  double voiced_fraction = 0.0;
  float vuv = 0.0f;             // voiced_fraction >= 0.5
  double duration_frames = 0.0;
  double energy_mean = 0.0;
};

/// Corpus-wide normalization statistics (population std).
struct NormStats {
  double lf0_mean = 0.0, lf0_std = 1.0;
  double dur_mean = 0.0, dur_std = 1.0;  // of log(duration_frames)
  double energy_mean = 0.0, energy_std = 1.0;

  bool operator==(const NormStats&) const = default;
};

}  // namespace pbtts
