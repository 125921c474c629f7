#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "pbtts/corpus.hpp"

namespace pbtts {

enum class ProsodyFeed { kPredicted, kGroundTruth };

struct ModelConfig {
  std::size_t n_phones = 16;
  std::size_t n_speakers = 2;
  std::size_t n_styles = 4;
  std::size_t d_model = 64;
  std::size_t d_spk_sty_embed = 16;
  std::size_t n_enc_blocks = 2;
  std::size_t n_dec_blocks = 2;
  std::size_t n_heads = 2;
  std::size_t d_ff = 128;
  std::size_t d_prosody = 4;
  std::size_t bottleneck_cnn_channels = 32;
  std::size_t se_reduction = 4;
  std::size_t agg_cnn_channels = 64;
  std::size_t n_mels = 20;
  std::size_t prenet_hidden = 64;
  std::size_t postnet_channels = 32;
  std::size_t max_phones = 64;
  std::size_t max_decoder_frames = 200;
  ProsodyFeed prosody_feed = ProsodyFeed::kPredicted;
  bool position_encoding = true;
  double dropout = 0.0;  // reserved; must stay 0
  std::uint64_t init_seed = 17;

  /// Throws ConfigError on the first violated invariant.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct TrainConfig {
  double alpha = 1.0;
  double beta = 1.0;
  /// Noam schedule: lr = lr_scale * d_model^-0.5 * min(s^-0.5, s * warmup^-1.5).
  double lr_scale = 0.2;
  std::size_t warmup_steps = 200;
  std::size_t max_steps = 8000;
  std::size_t batch_size = 4;
  std::uint64_t seed = 1;
  double grad_clip = 1.0;  // global L2 norm; 0 disables
  std::vector<std::string> frozen_groups;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct Config {
  ModelConfig model;
  TrainConfig train;
  SyntheticSpec corpus;
};

/// One documented configuration key. The table is the single source of truth
/// for parsing, formatting and help text.
struct ConfigKey {
  std::string section;
  std::string key;
  std::string help;
  std::function<std::string(const Config&)> get;
  std::function<void(Config&, std::string_view value, std::size_t line)> set;
};

const std::vector<ConfigKey>& config_keys();

Config parse_config_text(std::string_view text);
Config parse_config(const std::filesystem::path& path);

/// "[section]" blocks of "key = value" lines; parse_config_text inverts it.
std::string format_config(const Config& config, bool include_corpus = true);

/// Every key with its default and description.
std::string config_reference();

}  // namespace pbtts
