#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pbtts/extract.hpp"
#include "pbtts/formats.hpp"
#include "pbtts/prosody.hpp"

namespace pbtts {

struct SpeakerTimbre {
  double base_pitch_hz = 180.0;
  double tilt = 0.0;           // log-magnitude slope per envelope channel
  double formant_shift = 0.0;  // envelope channels
};

struct SyntheticSpec {
  std::size_t n_speakers = 2;
  std::size_t n_styles = 4;
  /// Speakers [0, multi_style_speakers) record every style; the rest record
  /// style 0 (neutral) only.
  std::size_t multi_style_speakers = 1;
  std::size_t n_phones = 16;
  std::size_t utts_per_cell = 40;
  std::size_t min_phones = 4;
  std::size_t max_phones = 12;
  std::size_t test_utterances = 50;
  std::uint64_t seed = 1234;
  std::size_t n_mels = 20;
  std::size_t pitch_channels = 8;
  bool with_audio = false;
  /// Empty means generated defaults (see default_timbres).
  std::vector<SpeakerTimbre> speakers;
};

void validate_spec(const SyntheticSpec& spec);
std::vector<SpeakerTimbre> default_timbres(std::size_t n_speakers, std::uint64_t seed);

/// Mel-domain rendering constants shared by the renderer and its inverse.
struct RenderConfig {
  std::size_t n_mels = 20;
  std::size_t pitch_channels = 8;
  double fmin_hz = 50.0;
  double fmax_hz = 500.0;
  double bump_height = 2.0;
  double bump_width = 0.7;
  double pitch_floor = -1.0;
  /// Envelope tilt per channel that sweeps from +t to -t across each phone;
  /// zero-mean over channels, so energy and pitch read back unchanged.
  double transition_tilt = 0.1;
};

RenderConfig render_config_for(const SyntheticSpec& spec);

/// Closed-form generator state: phone tables and style templates.
class ProsodyOracle {
 public:
  ProsodyOracle(const SyntheticSpec& spec, const PhoneInventory& inventory);

  /// Un-normalized prosody of `phones` spoken by `spk` in style `sty`.
  std::vector<RawPhoneFeatures> raw(const std::vector<PhoneId>& phones, SpeakerId spk, StyleId sty) const;
  /// Style pitch offset (log-Hz) at phone position i.
  double pitch_template(StyleId sty, std::size_t i) const;

  /// Envelope-band log magnitudes of `phone` for `spk` (zero mean).
  std::vector<double> envelope(PhoneId phone, SpeakerId spk) const;

  const SyntheticSpec& spec() const { return spec_; }
  const PhoneInventory& inventory() const { return inventory_; }
  /// Attempts needed to reach pairwise-distinguishable pitch templates.
  std::size_t template_attempts() const { return attempts_; }

 private:
  struct StyleTemplate {
    double pitch_mean, pitch_amp, pitch_freq, pitch_phase, pitch_slope;
    double dur_level, dur_amp, dur_freq, dur_phase;
    double energy_level, energy_amp, energy_freq, energy_phase;
  };
  struct Formant {
    double centre, height, width;
  };

  SyntheticSpec spec_;
  PhoneInventory inventory_;
  std::vector<SpeakerTimbre> timbres_;
  std::vector<StyleTemplate> styles_;
  std::vector<double> phone_pitch_;
  std::vector<double> phone_duration_;
  std::vector<double> phone_energy_;
  std::vector<std::vector<Formant>> formants_;
  std::size_t attempts_ = 0;
};

/// The fixed 8-phone text used for the template separability check.
std::vector<PhoneId> separability_text(const PhoneInventory& inventory);

struct RenderedUtterance {
  std::vector<AlignmentSegment> alignment;
  MelSpectrogramData mel;
};

/// Each phone contributes duration-many frames sharing its energy and pitch.
RenderedUtterance render_mel(const ProsodyOracle& oracle, const std::vector<PhoneId>& phones, SpeakerId spk,
                             const std::vector<RawPhoneFeatures>& prosody, const RenderConfig& rc);

/// Harmonic waveform whose analysis frames (PitchConfig defaults) are centred
/// on the rendered frames.
std::vector<float> render_audio(const std::vector<RawPhoneFeatures>& prosody, std::uint64_t seed,
                                double sample_rate = 16000.0, std::size_t hop = 256, std::size_t frame_len = 1024);

/// Per-frame f0/voicing/energy read back from a rendered (or predicted) mel.
FrameFeatures invert_rendered_mel(const MelSpectrogramData& mel, const RenderConfig& rc);

struct Utterance {
  std::string id;
  bool test = false;
  SpeakerId spk = 0;
  StyleId sty = 0;
  std::vector<PhoneId> phones;
  std::vector<AlignmentSegment> alignment;
  MelSpectrogramData mel;
  std::vector<RawPhoneFeatures> raw;
  ProsodySequence prosody;  // normalized with the corpus stats
  std::vector<float> audio;  // only with_audio
};

struct Corpus {
  PhoneInventory inventory;
  std::size_t n_speakers = 0;
  std::size_t n_styles = 0;
  RenderConfig render;
  NormStats stats;
  std::vector<Utterance> utterances;

  std::vector<const Utterance*> split(bool test) const;
  /// Test-split utterance with the given text index, speaker and style.
  const Utterance* find_test(std::size_t text_index, SpeakerId spk, StyleId sty) const;
  std::size_t test_texts() const;
};

/// splitmix64 of (seed, index); per-utterance generators are seeded this way.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

/// Training split: every recorded (speaker, style) cell. Test split: held-out
/// texts rendered for every (speaker, style) pair. Stats come from training.
Corpus generate_corpus(const SyntheticSpec& spec);

void write_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus read_corpus(const std::filesystem::path& dir);

/// Test utterance id for text index k: "test_<k>_s<spk>_y<sty>".
std::string test_utterance_id(std::size_t text_index, SpeakerId spk, StyleId sty);

}  // namespace pbtts
