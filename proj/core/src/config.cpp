#include "pbtts/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <set>

#include "pbtts/error.hpp"
#include "pbtts/formats.hpp"

namespace pbtts {

namespace {

const std::set<std::string> kGroupNames = {"encoder",  "speaker_embed", "style_embed",    "projections",
                                           "bottleneck", "agg_cnn",     "cross_attention", "decoder"};

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

[[noreturn]] void type_error(std::size_t line, std::string_view value, const char* type) {
  throw ParseError("line " + std::to_string(line) + ": expected " + type + ", got '" + std::string(value) + "'");
}

std::size_t to_size(std::string_view v, std::size_t line) {
  std::size_t out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || r.ec != std::errc() || r.ptr != v.data() + v.size()) type_error(line, v, "a non-negative integer");
  return out;
}

std::uint64_t to_u64(std::string_view v, std::size_t line) {
  std::uint64_t out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || r.ec != std::errc() || r.ptr != v.data() + v.size()) type_error(line, v, "a non-negative integer");
  return out;
}

double to_double(std::string_view v, std::size_t line) {
  double out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || r.ec != std::errc() || r.ptr != v.data() + v.size() || !std::isfinite(out)) {
    type_error(line, v, "a finite number");
  }
  return out;
}

bool to_bool(std::string_view v, std::size_t line) {
  if (v == "true") return true;
  if (v == "false") return false;
  type_error(line, v, "true or false");
}

// Shortest text that parses back to v.
std::string num(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (const auto& x : v) s += (s.empty() ? "" : ",") + x;
  return s;
}

std::vector<std::string> split_list(std::string_view v) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= v.size()) {
    auto end = v.find(',', start);
    if (end == std::string_view::npos) end = v.size();
    const auto item = trim(v.substr(start, end - start));
    if (!item.empty()) out.emplace_back(item);
    start = end + 1;
  }
  return out;
}

#define PBTTS_SIZE_KEY(sec, member, field, text)                                                     \
  ConfigKey {                                                                                       \
    sec, #field, text, [](const Config& c) { return std::to_string(c.member.field); },              \
        [](Config& c, std::string_view v, std::size_t line) { c.member.field = to_size(v, line); } \
  }
#define PBTTS_REAL_KEY(sec, member, field, text)                                                       \
  ConfigKey {                                                                                         \
    sec, #field, text, [](const Config& c) { return num(c.member.field); },                           \
        [](Config& c, std::string_view v, std::size_t line) { c.member.field = to_double(v, line); } \
  }
#define PBTTS_U64_KEY(sec, member, field, text)                                                     \
  ConfigKey {                                                                                      \
    sec, #field, text, [](const Config& c) { return std::to_string(c.member.field); },             \
        [](Config& c, std::string_view v, std::size_t line) { c.member.field = to_u64(v, line); } \
  }
#define PBTTS_BOOL_KEY(sec, member, field, text)                                                     \
  ConfigKey {                                                                                       \
    sec, #field, text, [](const Config& c) { return std::string(c.member.field ? "true" : "false"); }, \
        [](Config& c, std::string_view v, std::size_t line) { c.member.field = to_bool(v, line); }  \
  }

std::vector<ConfigKey> build_keys() {
  std::vector<ConfigKey> k = {
      PBTTS_SIZE_KEY("model", model, n_phones, "phone vocabulary size"),
      PBTTS_SIZE_KEY("model", model, n_speakers, "speaker table capacity"),
      PBTTS_SIZE_KEY("model", model, n_styles, "style table capacity"),
      PBTTS_SIZE_KEY("model", model, d_model, "hidden width"),
      PBTTS_SIZE_KEY("model", model, d_spk_sty_embed, "speaker/style embedding width"),
      PBTTS_SIZE_KEY("model", model, n_enc_blocks, "encoder blocks"),
      PBTTS_SIZE_KEY("model", model, n_dec_blocks, "decoder blocks"),
      PBTTS_SIZE_KEY("model", model, n_heads, "attention heads"),
      PBTTS_SIZE_KEY("model", model, d_ff, "feed-forward inner width"),
      PBTTS_SIZE_KEY("model", model, d_prosody, "prosody features per phone (fixed at 4)"),
      PBTTS_SIZE_KEY("model", model, bottleneck_cnn_channels, "prosody predictor conv channels"),
      PBTTS_SIZE_KEY("model", model, se_reduction, "squeeze-and-excitation reduction ratio"),
      PBTTS_SIZE_KEY("model", model, agg_cnn_channels, "prosody aggregation conv channels"),
      PBTTS_SIZE_KEY("model", model, n_mels, "mel channels"),
      PBTTS_SIZE_KEY("model", model, prenet_hidden, "decoder pre-net width"),
      PBTTS_SIZE_KEY("model", model, postnet_channels, "post-net conv channels"),
      PBTTS_SIZE_KEY("model", model, max_phones, "longest accepted phone sequence"),
      PBTTS_SIZE_KEY("model", model, max_decoder_frames, "autoregressive frame limit"),
      ConfigKey{"model", "prosody_feed", "prosody fed to the aggregation path: predicted or ground_truth",
                [](const Config& c) {
                  return std::string(c.model.prosody_feed == ProsodyFeed::kPredicted ? "predicted" : "ground_truth");
                },
                [](Config& c, std::string_view v, std::size_t line) {
                  if (v == "predicted") c.model.prosody_feed = ProsodyFeed::kPredicted;
                  else if (v == "ground_truth") c.model.prosody_feed = ProsodyFeed::kGroundTruth;
                  else type_error(line, v, "predicted or ground_truth");
                }},
      PBTTS_BOOL_KEY("model", model, position_encoding, "add sinusoidal positions to encoder and decoder inputs"),
      PBTTS_REAL_KEY("model", model, dropout, "reserved; only 0 is supported"),
      PBTTS_U64_KEY("model", model, init_seed, "parameter initialization seed"),

      PBTTS_REAL_KEY("train", train, alpha, "stop-token loss weight"),
      PBTTS_REAL_KEY("train", train, beta, "prosody loss weight"),
      PBTTS_REAL_KEY("train", train, lr_scale, "learning-rate multiplier on the Noam schedule"),
      PBTTS_SIZE_KEY("train", train, warmup_steps, "Noam warmup steps"),
      PBTTS_SIZE_KEY("train", train, max_steps, "optimizer steps"),
      PBTTS_SIZE_KEY("train", train, batch_size, "utterances per step"),
      PBTTS_U64_KEY("train", train, seed, "shuffling seed"),
      PBTTS_REAL_KEY("train", train, grad_clip, "global gradient-norm clip, 0 disables"),
      ConfigKey{"train", "frozen_groups", "comma-separated parameter groups left untouched",
                [](const Config& c) { return join(c.train.frozen_groups); },
                [](Config& c, std::string_view v, std::size_t) { c.train.frozen_groups = split_list(v); }},

      PBTTS_SIZE_KEY("corpus", corpus, n_speakers, "synthetic speakers"),
      PBTTS_SIZE_KEY("corpus", corpus, n_styles, "synthetic styles (style 0 is neutral)"),
      PBTTS_SIZE_KEY("corpus", corpus, multi_style_speakers, "leading speakers that record every style"),
      PBTTS_SIZE_KEY("corpus", corpus, n_phones, "phone inventory size"),
      PBTTS_SIZE_KEY("corpus", corpus, utts_per_cell, "training utterances per recorded speaker/style pair"),
      PBTTS_SIZE_KEY("corpus", corpus, min_phones, "shortest utterance in phones"),
      PBTTS_SIZE_KEY("corpus", corpus, max_phones, "longest utterance in phones"),
      PBTTS_SIZE_KEY("corpus", corpus, test_utterances, "held-out texts"),
      PBTTS_U64_KEY("corpus", corpus, seed, "generator seed"),
      PBTTS_SIZE_KEY("corpus", corpus, n_mels, "mel channels"),
      PBTTS_SIZE_KEY("corpus", corpus, pitch_channels, "low mel channels carrying the pitch bump"),
      PBTTS_BOOL_KEY("corpus", corpus, with_audio, "also write harmonic waveforms"),
  };
  return k;
}

#undef PBTTS_SIZE_KEY
#undef PBTTS_REAL_KEY
#undef PBTTS_U64_KEY
#undef PBTTS_BOOL_KEY

}  // namespace

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string("model.") + name + " must be at least 1");
  };
  positive(n_phones, "n_phones");
  positive(n_speakers, "n_speakers");
  positive(n_styles, "n_styles");
  positive(d_model, "d_model");
  positive(d_spk_sty_embed, "d_spk_sty_embed");
  positive(n_enc_blocks, "n_enc_blocks");
  positive(n_dec_blocks, "n_dec_blocks");
  positive(n_heads, "n_heads");
  positive(d_ff, "d_ff");
  positive(bottleneck_cnn_channels, "bottleneck_cnn_channels");
  positive(se_reduction, "se_reduction");
  positive(agg_cnn_channels, "agg_cnn_channels");
  positive(n_mels, "n_mels");
  positive(prenet_hidden, "prenet_hidden");
  positive(postnet_channels, "postnet_channels");
  positive(max_phones, "max_phones");
  positive(max_decoder_frames, "max_decoder_frames");
  if (d_prosody != kProsodyDim) {
    throw ConfigError("model.d_prosody must be 4 (lf0, vuv, duration, energy), got " + std::to_string(d_prosody));
  }
  if (d_model % n_heads != 0) throw ConfigError("model.d_model must be divisible by model.n_heads");
  if (bottleneck_cnn_channels % se_reduction != 0) {
    throw ConfigError("model.bottleneck_cnn_channels must be divisible by model.se_reduction");
  }
  if (dropout != 0.0) throw ConfigError("model.dropout is reserved and must be 0");
}

void TrainConfig::validate() const {
  if (!(alpha > 0.0) || !(beta > 0.0)) throw ConfigError("train.alpha and train.beta must be positive");
  if (!(lr_scale > 0.0)) throw ConfigError("train.lr_scale must be positive");
  if (warmup_steps == 0) throw ConfigError("train.warmup_steps must be at least 1");
  if (batch_size == 0) throw ConfigError("train.batch_size must be at least 1");
  if (!(grad_clip >= 0.0)) throw ConfigError("train.grad_clip must be non-negative");
  for (const auto& g : frozen_groups) {
    if (!kGroupNames.count(g)) throw ConfigError("train.frozen_groups: unknown parameter group '" + g + "'");
  }
}

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = build_keys();
  return keys;
}

Config parse_config_text(std::string_view text) {
  Config c;
  std::string section;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ParseError("line " + std::to_string(line_no) + ": malformed section header");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      if (section != "model" && section != "train" && section != "corpus") {
        throw ConfigError("line " + std::to_string(line_no) + ": unknown section [" + section + "]");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError("line " + std::to_string(line_no) + ": expected 'key = value'");
    if (section.empty()) throw ParseError("line " + std::to_string(line_no) + ": key outside any [section]");
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    bool found = false;
    for (const auto& k : config_keys()) {
      if (k.section == section && k.key == key) {
        k.set(c, value, line_no);
        found = true;
        break;
      }
    }
    if (!found) {
      throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + std::string(key) + "' in section [" +
                        section + "]");
    }
  }
  c.model.validate();
  c.train.validate();
  validate_spec(c.corpus);
  return c;
}

Config parse_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("config file not found: " + path.string());
  return parse_config_text(read_text(path));
}

std::string format_config(const Config& config, bool include_corpus) {
  std::string out;
  std::string section;
  for (const auto& k : config_keys()) {
    if (!include_corpus && k.section == "corpus") continue;
    if (k.section != section) {
      section = k.section;
      out += (out.empty() ? "[" : "\n[") + section + "]\n";
    }
    out += k.key + " = " + k.get(config) + "\n";
  }
  return out;
}

std::string config_reference() {
  const Config defaults;
  std::string out;
  std::string section;
  for (const auto& k : config_keys()) {
    if (k.section != section) {
      section = k.section;
      out += (out.empty() ? "[" : "\n[") + section + "]\n";
    }
    out += k.key + " = " + k.get(defaults) + "    # " + k.help + "\n";
  }
  return out;
}

}  // namespace pbtts
