#include "pbtts/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>
#include <set>

#include "pbtts/error.hpp"
#include "pbtts/random.hpp"

namespace pbtts {

namespace {

constexpr std::size_t kMaxTemplateAttempts = 1000;

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

PhoneInventory inventory_for(const SyntheticSpec& spec) {
  if (spec.n_phones == 16) return PhoneInventory::standard();
  std::vector<std::string> symbols;
  std::vector<bool> voiced;
  for (std::size_t i = 0; i < spec.n_phones; ++i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "ph%02zu", i);
    symbols.emplace_back(buf);
    voiced.push_back(i % 4 != 3);
  }
  return PhoneInventory(std::move(symbols), std::move(voiced));
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

void validate_spec(const SyntheticSpec& s) {
  if (s.n_phones < 2) throw ConfigError("corpus: n_phones must be at least 2");
  if (s.utts_per_cell == 0) throw ConfigError("corpus: utts_per_cell must be positive");
  if (s.n_speakers == 0 || s.n_styles == 0) throw ConfigError("corpus: need at least one speaker and one style");
  if (s.multi_style_speakers > s.n_speakers) throw ConfigError("corpus: multi_style_speakers exceeds n_speakers");
  if (s.min_phones < 1 || s.min_phones > s.max_phones) throw ConfigError("corpus: need 1 <= min_phones <= max_phones");
  if (s.pitch_channels < 3) throw ConfigError("corpus: pitch_channels must be at least 3");
  if (s.n_mels < s.pitch_channels + 4) throw ConfigError("corpus: n_mels must exceed pitch_channels by at least 4");
  if (!s.speakers.empty() && s.speakers.size() != s.n_speakers) {
    throw ConfigError("corpus: explicit speaker timbres must cover every speaker");
  }
  for (const auto& t : s.speakers) {
    if (!(t.base_pitch_hz >= 60.0 && t.base_pitch_hz <= 400.0)) {
      throw ConfigError("corpus: base pitch must lie in [60, 400] Hz");
    }
  }
}

std::vector<SpeakerTimbre> default_timbres(std::size_t n_speakers, std::uint64_t seed) {
  std::vector<SpeakerTimbre> out;
  Rng rng(derive_seed(seed, 0xC0FFEE));
  for (std::size_t k = 0; k < n_speakers; ++k) {
    if (k == 0) out.push_back({175.0, -0.1, 0.0});
    else if (k == 1) out.push_back({165.0, 0.1, 1.5});
    else out.push_back({rng.uniform(120.0, 220.0), rng.uniform(-0.15, 0.15), rng.uniform(-2.0, 2.0)});
  }
  return out;
}

RenderConfig render_config_for(const SyntheticSpec& spec) {
  RenderConfig rc;
  rc.n_mels = spec.n_mels;
  rc.pitch_channels = spec.pitch_channels;
  return rc;
}

std::vector<PhoneId> separability_text(const PhoneInventory& inventory) {
  std::vector<PhoneId> text;
  for (std::size_t i = 0; text.size() < 8; ++i) {
    const auto id = static_cast<PhoneId>(i % inventory.size());
    if (inventory.voiced(id) || i >= 8 * inventory.size()) text.push_back(id);
  }
  return text;
}

ProsodyOracle::ProsodyOracle(const SyntheticSpec& spec, const PhoneInventory& inventory)
    : spec_(spec), inventory_(inventory) {
  validate_spec(spec_);
  timbres_ = spec_.speakers.empty() ? default_timbres(spec_.n_speakers, spec_.seed) : spec_.speakers;

  Rng prng(derive_seed(spec_.seed, 0xB000));
  const std::size_t env = spec_.n_mels - spec_.pitch_channels;
  for (std::size_t p = 0; p < inventory_.size(); ++p) {
    const bool voiced = inventory_.voiced(static_cast<PhoneId>(p));
    const bool vowel = voiced && p < inventory_.size() / 2;
    phone_pitch_.push_back(prng.uniform(-0.03, 0.03));
    phone_duration_.push_back(prng.uniform(3.0, 5.0));
    if (vowel) phone_energy_.push_back(prng.uniform(-0.2, 0.2));
    else if (voiced) phone_energy_.push_back(prng.uniform(-0.8, -0.4));
    else phone_energy_.push_back(prng.uniform(-1.2, -0.8));
    std::vector<Formant> f;
    const double top = static_cast<double>(env - 1);
    if (voiced) {
      f.push_back({prng.uniform(0.0, 0.45 * top), prng.uniform(1.0, 2.0), prng.uniform(0.8, 1.5)});
      f.push_back({prng.uniform(0.45 * top, top), prng.uniform(1.0, 2.0), prng.uniform(0.8, 1.5)});
    } else {
      f.push_back({prng.uniform(0.7 * top, top), prng.uniform(1.5, 2.5), prng.uniform(1.5, 2.5)});
    }
    formants_.push_back(std::move(f));
  }

  // Style templates are redrawn until every pair of pitch contours over the
  // fixed text correlates below 0.5.
  const auto text = separability_text(inventory_);
  for (attempts_ = 1; attempts_ <= kMaxTemplateAttempts; ++attempts_) {
    Rng srng(derive_seed(spec_.seed, 0xA000 + attempts_));
    styles_.clear();
    for (std::size_t s = 0; s < spec_.n_styles; ++s) {
      StyleTemplate t;
      t.pitch_mean = s == 0 ? 0.0 : srng.uniform(-0.15, 0.15);
      t.pitch_amp = s == 0 ? srng.uniform(0.08, 0.14) : srng.uniform(0.15, 0.3);
      t.pitch_freq = srng.uniform(0.35, 1.1);
      t.pitch_phase = srng.uniform(0.0, 2.0 * std::numbers::pi);
      t.pitch_slope = srng.uniform(-0.3, 0.3);
      t.dur_level = s == 0 ? 0.0 : srng.uniform(-0.25, 0.25);
      t.dur_amp = srng.uniform(0.15, 0.35);
      t.dur_freq = srng.uniform(0.35, 1.1);
      t.dur_phase = srng.uniform(0.0, 2.0 * std::numbers::pi);
      t.energy_level = s == 0 ? 0.0 : srng.uniform(-0.3, 0.3);
      t.energy_amp = srng.uniform(0.2, 0.4);
      t.energy_freq = srng.uniform(0.35, 1.1);
      t.energy_phase = srng.uniform(0.0, 2.0 * std::numbers::pi);
      styles_.push_back(t);
    }
    bool separable = true;
    std::vector<std::vector<double>> contours;
    for (std::size_t s = 0; s < spec_.n_styles; ++s) {
      std::vector<double> c;
      for (const auto& r : raw(text, 0, static_cast<StyleId>(s))) c.push_back(r.lf0_mean);
      contours.push_back(std::move(c));
    }
    for (std::size_t a = 0; a < contours.size() && separable; ++a) {
      for (std::size_t b = a + 1; b < contours.size(); ++b) {
        if (pearson(contours[a], contours[b]) >= 0.5) {
          separable = false;
          break;
        }
      }
    }
    if (separable) return;
  }
  throw ConfigError("corpus: could not draw distinguishable style templates");
}

double ProsodyOracle::pitch_template(StyleId sty, std::size_t i) const {
  const auto& t = styles_.at(static_cast<std::size_t>(sty));
  const double x = static_cast<double>(i);
  return t.pitch_mean + t.pitch_amp * std::sin(t.pitch_freq * x + t.pitch_phase) + t.pitch_slope * x / 11.0;
}

std::vector<RawPhoneFeatures> ProsodyOracle::raw(const std::vector<PhoneId>& phones, SpeakerId spk,
                                                 StyleId sty) const {
  if (spk < 0 || static_cast<std::size_t>(spk) >= timbres_.size()) throw InputError("oracle: speaker out of range");
  if (sty < 0 || static_cast<std::size_t>(sty) >= styles_.size()) throw InputError("oracle: style out of range");
  const auto& t = styles_[static_cast<std::size_t>(sty)];
  std::vector<RawPhoneFeatures> out;
  for (std::size_t i = 0; i < phones.size(); ++i) {
    const auto p = static_cast<std::size_t>(phones[i]);
    inventory_.symbol(phones[i]);
    const double x = static_cast<double>(i);
    RawPhoneFeatures r;
    const bool voiced = inventory_.voiced(phones[i]);
    r.vuv = voiced ? 1.0f : 0.0f;
    r.voiced_fraction = voiced ? 1.0 : 0.0;
    r.lf0_mean = voiced ? std::log(timbres_[static_cast<std::size_t>(spk)].base_pitch_hz) + pitch_template(sty, i) +
                              phone_pitch_[p]
                        : 0.0;
    const double mult = std::exp(t.dur_level + t.dur_amp * std::sin(t.dur_freq * x + t.dur_phase));
    r.duration_frames = std::clamp(std::round(phone_duration_[p] * mult), 2.0, 8.0);
    r.energy_mean =
        0.1 * std::exp(phone_energy_[p] + t.energy_level + t.energy_amp * std::sin(t.energy_freq * x + t.energy_phase));
    out.push_back(r);
  }
  return out;
}

std::vector<double> ProsodyOracle::envelope(PhoneId phone, SpeakerId spk) const {
  inventory_.symbol(phone);
  const auto& timbre = timbres_.at(static_cast<std::size_t>(spk));
  const std::size_t n = spec_.n_mels - spec_.pitch_channels;
  const double mid = 0.5 * static_cast<double>(n - 1);
  std::vector<double> e(n, 0.0);
  for (std::size_t c = 0; c < n; ++c) {
    const double x = static_cast<double>(c);
    for (const auto& f : formants_[static_cast<std::size_t>(phone)]) {
      const double d = x - f.centre - timbre.formant_shift;
      e[c] += f.height * std::exp(-d * d / (2.0 * f.width * f.width));
    }
    e[c] += timbre.tilt * (x - mid);
  }
  double m = 0.0;
  for (double v : e) m += v;
  m /= static_cast<double>(n);
  for (double& v : e) v -= m;
  return e;
}

RenderedUtterance render_mel(const ProsodyOracle& oracle, const std::vector<PhoneId>& phones, SpeakerId spk,
                             const std::vector<RawPhoneFeatures>& prosody, const RenderConfig& rc) {
  if (phones.size() != prosody.size()) throw InputError("render: phone/prosody count mismatch");
  RenderedUtterance out;
  out.mel.n_mels = rc.n_mels;
  const std::size_t k = rc.pitch_channels;
  const double lo = std::log(rc.fmin_hz), hi = std::log(rc.fmax_hz);
  std::size_t frame = 0;
  for (std::size_t i = 0; i < phones.size(); ++i) {
    const auto& r = prosody[i];
    const auto dur = static_cast<std::size_t>(std::lround(r.duration_frames));
    if (dur == 0) throw InputError("render: zero-length phone");
    const double base = std::log(r.energy_mean);
    const auto env = oracle.envelope(phones[i], spk);
    std::vector<float> row(rc.n_mels);
    const double pos = static_cast<double>(k - 1) * (r.lf0_mean - lo) / (hi - lo);
    for (std::size_t c = 0; c < k; ++c) {
      double v = base + rc.pitch_floor;
      if (r.vuv >= 0.5f) {
        const double d = static_cast<double>(c) - pos;
        v += rc.bump_height * std::exp(-d * d / (2.0 * rc.bump_width * rc.bump_width));
      }
      row[c] = static_cast<float>(v);
    }
    const double centre = 0.5 * static_cast<double>(rc.n_mels - k - 1);
    for (std::size_t t = 0; t < dur; ++t) {
      const double tilt = dur > 1 ? rc.transition_tilt * (1.0 - 2.0 * static_cast<double>(t) / static_cast<double>(dur - 1))
                                  : 0.0;
      for (std::size_t c = k; c < rc.n_mels; ++c) {
        row[c] = static_cast<float>(base + env[c - k] + tilt * (static_cast<double>(c - k) - centre));
      }
      out.mel.values.insert(out.mel.values.end(), row.begin(), row.end());
    }
    out.alignment.push_back({phones[i], frame, frame + dur});
    frame += dur;
  }
  out.mel.frames = frame;
  return out;
}

std::vector<float> render_audio(const std::vector<RawPhoneFeatures>& prosody, std::uint64_t seed, double sample_rate,
                                std::size_t hop, std::size_t frame_len) {
  std::vector<double> f0, rms;
  for (const auto& r : prosody) {
    const auto dur = static_cast<std::size_t>(std::lround(r.duration_frames));
    for (std::size_t t = 0; t < dur; ++t) {
      f0.push_back(r.vuv >= 0.5f ? std::exp(r.lf0_mean) : 0.0);
      rms.push_back(r.energy_mean);
    }
  }
  if (f0.empty()) return {};
  const std::size_t lead = frame_len / 2 - hop / 2;
  const std::size_t total = hop * f0.size() + 2 * lead;
  std::vector<float> out(total);
  Rng rng(seed);
  std::vector<double> phase(64, 0.0);
  for (std::size_t n = 0; n < total; ++n) {
    const std::size_t t = n < lead ? 0 : std::min((n - lead) / hop, f0.size() - 1);
    double v;
    if (f0[t] > 0.0) {
      const auto harmonics = static_cast<std::size_t>(std::min(64.0, std::floor(3500.0 / f0[t])));
      double s = 0.0, power = 0.0;
      for (std::size_t h = 1; h <= harmonics; ++h) {
        const double a = 1.0 / static_cast<double>(h);
        phase[h - 1] += 2.0 * std::numbers::pi * f0[t] * static_cast<double>(h) / sample_rate;
        s += a * std::sin(phase[h - 1]);
        power += 0.5 * a * a;
      }
      v = rms[t] * s / std::sqrt(power);
    } else {
      v = rms[t] * std::sqrt(3.0) * rng.uniform(-1.0, 1.0);
    }
    out[n] = static_cast<float>(v);
  }
  return out;
}

FrameFeatures invert_rendered_mel(const MelSpectrogramData& mel, const RenderConfig& rc) {
  if (mel.n_mels != rc.n_mels) throw InputError("mel has " + std::to_string(mel.n_mels) + " channels, expected " +
                                                std::to_string(rc.n_mels));
  const std::size_t k = rc.pitch_channels;
  const double lo = std::log(rc.fmin_hz), hi = std::log(rc.fmax_hz);
  FrameFeatures f;
  for (std::size_t t = 0; t < mel.frames; ++t) {
    double base = 0.0;
    for (std::size_t c = k; c < rc.n_mels; ++c) base += mel.at(t, c);
    base /= static_cast<double>(rc.n_mels - k);
    std::vector<double> g(k);
    for (std::size_t c = 0; c < k; ++c) g[c] = mel.at(t, c) - base - rc.pitch_floor;
    const auto peak = static_cast<std::size_t>(std::max_element(g.begin(), g.end()) - g.begin());
    const bool voiced = g[peak] > 0.5 * rc.bump_height;
    float hz = 0.0f;
    if (voiced) {
      double pos = static_cast<double>(peak);
      if (peak > 0 && peak + 1 < k) {
        const double l = std::log(std::max(g[peak - 1], 1e-4)), m = std::log(std::max(g[peak], 1e-4)),
                     r = std::log(std::max(g[peak + 1], 1e-4));
        const double curv = l - 2.0 * m + r;
        if (curv < 0.0) pos += std::clamp(0.5 * (l - r) / curv, -1.0, 1.0);
      }
      hz = static_cast<float>(std::exp(lo + pos / static_cast<double>(k - 1) * (hi - lo)));
    }
    f.f0_hz.push_back(hz);
    f.voiced.push_back(voiced);
    f.energy_rms.push_back(static_cast<float>(std::exp(base)));
  }
  return f;
}

std::vector<const Utterance*> Corpus::split(bool test) const {
  std::vector<const Utterance*> out;
  for (const auto& u : utterances) {
    if (u.test == test) out.push_back(&u);
  }
  return out;
}

std::string test_utterance_id(std::size_t text_index, SpeakerId spk, StyleId sty) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "test_%03zu_s%d_y%d", text_index, spk, sty);
  return buf;
}

const Utterance* Corpus::find_test(std::size_t text_index, SpeakerId spk, StyleId sty) const {
  const auto id = test_utterance_id(text_index, spk, sty);
  for (const auto& u : utterances) {
    if (u.test && u.id == id) return &u;
  }
  return nullptr;
}

std::size_t Corpus::test_texts() const {
  std::set<std::vector<PhoneId>> texts;
  for (const auto& u : utterances) {
    if (u.test) texts.insert(u.phones);
  }
  return texts.size();
}

Corpus generate_corpus(const SyntheticSpec& spec) {
  validate_spec(spec);
  Corpus corpus;
  corpus.inventory = inventory_for(spec);
  corpus.n_speakers = spec.n_speakers;
  corpus.n_styles = spec.n_styles;
  corpus.render = render_config_for(spec);
  const ProsodyOracle oracle(spec, corpus.inventory);

  bool any_voiced = false;
  for (std::size_t p = 0; p < corpus.inventory.size(); ++p) any_voiced |= corpus.inventory.voiced(static_cast<PhoneId>(p));
  // Texts carry at least 3 voiced phones (or are fully voiced when shorter).
  auto draw_text = [&](Rng& rng) {
    const auto n = spec.min_phones + rng.below(spec.max_phones - spec.min_phones + 1);
    const std::size_t need = any_voiced ? std::min<std::size_t>(3, n) : 0;
    std::vector<PhoneId> phones(n);
    std::size_t voiced = 0;
    do {
      voiced = 0;
      for (auto& p : phones) {
        p = static_cast<PhoneId>(rng.below(corpus.inventory.size()));
        voiced += corpus.inventory.voiced(p) ? 1 : 0;
      }
    } while (voiced < need);
    return phones;
  };
  auto make = [&](std::string id, bool test, SpeakerId spk, StyleId sty, std::vector<PhoneId> phones,
                  std::uint64_t audio_seed) {
    Utterance u;
    u.id = std::move(id);
    u.test = test;
    u.spk = spk;
    u.sty = sty;
    u.phones = std::move(phones);
    u.raw = oracle.raw(u.phones, spk, sty);
    auto r = render_mel(oracle, u.phones, spk, u.raw, corpus.render);
    u.alignment = std::move(r.alignment);
    u.mel = std::move(r.mel);
    if (spec.with_audio) u.audio = render_audio(u.raw, audio_seed);
    return u;
  };

  std::set<std::vector<PhoneId>> train_texts;
  std::uint64_t index = 0;
  for (std::size_t spk = 0; spk < spec.n_speakers; ++spk) {
    const std::size_t styles = spk < spec.multi_style_speakers ? spec.n_styles : 1;
    for (std::size_t sty = 0; sty < styles; ++sty) {
      for (std::size_t j = 0; j < spec.utts_per_cell; ++j, ++index) {
        Rng rng(derive_seed(spec.seed, 1000 + index));
        auto text = draw_text(rng);
        train_texts.insert(text);
        char buf[64];
        std::snprintf(buf, sizeof buf, "train_s%zu_y%zu_%03zu", spk, sty, j);
        corpus.utterances.push_back(make(buf, false, static_cast<SpeakerId>(spk), static_cast<StyleId>(sty),
                                         std::move(text), derive_seed(spec.seed, 2000000 + index)));
      }
    }
  }
  for (std::size_t k = 0; k < spec.test_utterances; ++k) {
    std::vector<PhoneId> text;
    for (std::uint64_t attempt = 0;; ++attempt) {
      Rng rng(derive_seed(spec.seed, 1000000 + k * 1000 + attempt));
      text = draw_text(rng);
      if (!train_texts.count(text)) break;
      if (attempt > 100) throw ConfigError("corpus: cannot draw held-out texts disjoint from training");
    }
    for (std::size_t spk = 0; spk < spec.n_speakers; ++spk) {
      for (std::size_t sty = 0; sty < spec.n_styles; ++sty, ++index) {
        corpus.utterances.push_back(make(test_utterance_id(k, static_cast<SpeakerId>(spk), static_cast<StyleId>(sty)),
                                         true, static_cast<SpeakerId>(spk), static_cast<StyleId>(sty), text,
                                         derive_seed(spec.seed, 2000000 + index)));
      }
    }
  }

  std::vector<std::vector<RawPhoneFeatures>> train_raw;
  for (const auto& u : corpus.utterances) {
    if (!u.test) train_raw.push_back(u.raw);
  }
  corpus.stats = normalize_global(train_raw).stats;
  for (auto& u : corpus.utterances) {
    for (const auto& r : u.raw) {
      auto v = normalize_phone(r, corpus.stats);
      for (float* f : {&v.lf0_z, &v.vuv, &v.dur_z, &v.energy_z}) *f = round6(*f);
      u.prosody.push_back(v);
    }
  }
  return corpus;
}

namespace {

constexpr const char* kMetaHeader = "#pbtts-corpus version=1";

std::string join_symbols(const PhoneInventory& inv, bool voiced) {
  std::string s;
  for (std::size_t i = 0; i < inv.size(); ++i) {
    if (inv.voiced(static_cast<PhoneId>(i)) == voiced) s += " " + inv.symbol(static_cast<PhoneId>(i));
  }
  return s;
}

std::vector<std::string> tokens(const std::string& line) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && line[i] == ' ') ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

}  // namespace

void write_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::string meta = std::string(kMetaHeader) + "\n";
  meta += "n_speakers " + std::to_string(corpus.n_speakers) + "\n";
  meta += "n_styles " + std::to_string(corpus.n_styles) + "\n";
  meta += "n_mels " + std::to_string(corpus.render.n_mels) + "\n";
  meta += "pitch_channels " + std::to_string(corpus.render.pitch_channels) + "\n";
  meta += "phones";
  for (const auto& s : corpus.inventory.symbols()) meta += " " + s;
  meta += "\nunvoiced" + join_symbols(corpus.inventory, false) + "\n";
  meta += "norm " + format_norm_stats(corpus.stats);
  for (const auto& u : corpus.utterances) {
    meta += "utt " + u.id + (u.test ? " test " : " train ") + std::to_string(u.spk) + " " + std::to_string(u.sty) + "\n";
  }
  for (const auto& u : corpus.utterances) {
    const auto stem = dir / ("utt_" + u.id);
    write_bytes_atomic(stem.string() + ".mel", encode_mel(u.mel));
    write_text_atomic(stem.string() + ".align",
                      format_alignment({u.id, u.mel.frames, u.alignment}, corpus.inventory));
    write_text_atomic(stem.string() + ".pros", format_prosody({u.id, true, u.phones, u.prosody}, corpus.inventory));
    if (!u.audio.empty()) write_bytes_atomic(stem.string() + ".wav", encode_wav({16000, u.audio}));
  }
  write_text_atomic(dir / "meta.txt", meta);
}

Corpus read_corpus(const std::filesystem::path& dir) {
  const auto text = read_text(dir / "meta.txt");
  std::vector<std::string> lines;
  {
    std::size_t start = 0;
    while (start < text.size()) {
      auto end = text.find('\n', start);
      if (end == std::string::npos) end = text.size();
      lines.push_back(text.substr(start, end - start));
      start = end + 1;
    }
  }
  if (lines.empty() || lines[0] != kMetaHeader) throw ParseError("meta.txt line 1: expected '" + std::string(kMetaHeader) + "'");
  Corpus corpus;
  std::vector<std::string> symbols;
  std::set<std::string> unvoiced;
  bool have_norm = false;
  struct Entry {
    std::string id;
    bool test;
    SpeakerId spk;
    StyleId sty;
  };
  std::vector<Entry> entries;
  auto number = [&](const std::string& tok, std::size_t line) -> long {
    try {
      std::size_t used = 0;
      const long v = std::stol(tok, &used);
      if (used != tok.size() || v < 0) throw std::invalid_argument(tok);
      return v;
    } catch (const std::exception&) {
      throw ParseError("meta.txt line " + std::to_string(line) + ": expected a non-negative integer, got '" + tok + "'");
    }
  };
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto tok = tokens(lines[i]);
    if (tok.empty()) continue;
    const auto& key = tok[0];
    if ((key == "n_speakers" || key == "n_styles" || key == "n_mels" || key == "pitch_channels") && tok.size() == 2) {
      const auto v = static_cast<std::size_t>(number(tok[1], i + 1));
      if (key == "n_speakers") corpus.n_speakers = v;
      else if (key == "n_styles") corpus.n_styles = v;
      else if (key == "n_mels") corpus.render.n_mels = v;
      else corpus.render.pitch_channels = v;
    } else if (key == "phones") {
      symbols.assign(tok.begin() + 1, tok.end());
    } else if (key == "unvoiced") {
      unvoiced.insert(tok.begin() + 1, tok.end());
    } else if (key == "norm") {
      std::string rest;
      for (std::size_t j = 1; j < tok.size(); ++j) rest += tok[j] + " ";
      corpus.stats = parse_norm_stats(rest);
      have_norm = true;
    } else if (key == "utt" && tok.size() == 5 && (tok[2] == "train" || tok[2] == "test")) {
      entries.push_back({tok[1], tok[2] == "test", static_cast<SpeakerId>(number(tok[3], i + 1)),
                         static_cast<StyleId>(number(tok[4], i + 1))});
    } else {
      throw ParseError("meta.txt line " + std::to_string(i + 1) + ": unrecognized entry '" + key + "'");
    }
  }
  if (symbols.empty() || !have_norm) throw ParseError("meta.txt: missing phones or norm line");
  std::vector<bool> voiced;
  for (const auto& s : symbols) voiced.push_back(!unvoiced.count(s));
  corpus.inventory = PhoneInventory(symbols, voiced);
  for (const auto& e : entries) {
    if (static_cast<std::size_t>(e.spk) >= corpus.n_speakers || static_cast<std::size_t>(e.sty) >= corpus.n_styles) {
      throw ParseError("meta.txt: utterance " + e.id + " has out-of-range speaker or style");
    }
    const auto stem = (dir / ("utt_" + e.id)).string();
    Utterance u;
    u.id = e.id;
    u.test = e.test;
    u.spk = e.spk;
    u.sty = e.sty;
    u.mel = decode_mel(read_bytes(stem + ".mel"));
    if (u.mel.n_mels != corpus.render.n_mels) throw InputError("utterance " + e.id + ": mel channel count mismatch");
    const auto align = parse_alignment(read_text(stem + ".align"), corpus.inventory);
    const auto pros = parse_prosody(read_text(stem + ".pros"), corpus.inventory);
    if (align.total_frames != u.mel.frames || align.segments.back().end_frame != u.mel.frames) {
      throw AlignmentError("utterance " + e.id + ": alignment does not cover the mel frames");
    }
    if (pros.phones.size() != align.segments.size() || !pros.normalized) {
      throw InputError("utterance " + e.id + ": prosody file does not match alignment");
    }
    for (std::size_t i = 0; i < align.segments.size(); ++i) {
      if (align.segments[i].phone != pros.phones[i]) {
        throw InputError("utterance " + e.id + ": prosody and alignment phones differ at position " + std::to_string(i));
      }
    }
    u.alignment = align.segments;
    u.phones = pros.phones;
    u.prosody = pros.values;
    for (const auto& p : u.prosody) u.raw.push_back(denormalize_phone(p, corpus.stats));
    if (std::filesystem::exists(stem + ".wav")) u.audio = decode_wav(read_bytes(stem + ".wav")).samples;
    corpus.utterances.push_back(std::move(u));
  }
  return corpus;
}

}  // namespace pbtts
