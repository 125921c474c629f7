#include "pbtts/formats.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "pbtts/error.hpp"

namespace pbtts {

namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

std::vector<std::string_view> lines_of(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    out.push_back(line);
    start = end + 1;
  }
  while (!out.empty() && split_ws(out.back()).empty()) out.pop_back();
  return out;
}

[[noreturn]] void parse_fail(std::size_t line, const std::string& what) {
  throw ParseError("line " + std::to_string(line) + ": " + what);
}

template <typename N>
N parse_number(std::string_view tok, std::size_t line) {
  N v{};
  const auto* end = tok.data() + tok.size();
  const auto res = std::from_chars(tok.data(), end, v);
  if (res.ec != std::errc() || res.ptr != end) parse_fail(line, "expected a number, got '" + std::string(tok) + "'");
  if constexpr (std::is_floating_point_v<N>) {
    if (!std::isfinite(v)) parse_fail(line, "non-finite value '" + std::string(tok) + "'");
  }
  return v;
}

/// Parses "#utt <id> key=value".
std::pair<std::string, std::string> parse_header(std::string_view line, std::string_view key) {
  const auto tok = split_ws(line);
  if (tok.size() != 3 || tok[0] != "#utt") parse_fail(1, "expected header '#utt <id> " + std::string(key) + "=...'");
  const std::string prefix = std::string(key) + "=";
  if (tok[2].substr(0, prefix.size()) != prefix) parse_fail(1, "expected '" + prefix + "' in header");
  return {std::string(tok[1]), std::string(tok[2].substr(prefix.size()))};
}

}  // namespace

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  // "-0.000000" and "0.000000" must be the same text.
  if (std::strcmp(buf, "-0.000000") == 0) return "0.000000";
  return buf;
}

float round6(float v) {
  const auto text = fixed6(v);
  float out = 0.0f;
  std::from_chars(text.data(), text.data() + text.size(), out);
  return out;
}

PhoneInventory::PhoneInventory(std::vector<std::string> symbols, std::vector<bool> voiced)
    : symbols_(std::move(symbols)), voiced_(std::move(voiced)) {
  if (symbols_.empty()) throw ConfigError("phone inventory is empty");
  if (voiced_.size() != symbols_.size()) throw ConfigError("phone inventory: voicing table size mismatch");
  for (std::size_t i = 0; i < symbols_.size(); ++i) {
    if (symbols_[i].empty() || split_ws(symbols_[i]).size() != 1) {
      throw ConfigError("phone inventory: invalid symbol '" + symbols_[i] + "'");
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (symbols_[j] == symbols_[i]) throw ConfigError("phone inventory: duplicate symbol " + symbols_[i]);
    }
  }
}

PhoneInventory PhoneInventory::standard() {
  std::vector<std::string> s = {"aa", "ae", "ah", "eh", "ih", "iy", "ow", "uw",
                                "m",  "n",  "l",  "r",  "s",  "f",  "sh", "t"};
  std::vector<bool> v(s.size(), true);
  for (std::size_t i = 12; i < s.size(); ++i) v[i] = false;
  return PhoneInventory(std::move(s), std::move(v));
}

const std::string& PhoneInventory::symbol(PhoneId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= symbols_.size()) {
    throw InputError("phone id " + std::to_string(id) + " outside inventory of " + std::to_string(size()));
  }
  return symbols_[static_cast<std::size_t>(id)];
}

bool PhoneInventory::voiced(PhoneId id) const {
  symbol(id);
  return voiced_[static_cast<std::size_t>(id)];
}

PhoneId PhoneInventory::id(std::string_view symbol) const {
  for (std::size_t i = 0; i < symbols_.size(); ++i) {
    if (symbols_[i] == symbol) return static_cast<PhoneId>(i);
  }
  throw InputError("unknown phone symbol '" + std::string(symbol) + "'");
}

std::vector<PhoneId> PhoneInventory::parse_sequence(std::string_view text) const {
  std::vector<PhoneId> ids;
  for (auto tok : split_ws(text)) ids.push_back(id(tok));
  if (ids.empty()) throw InputError("empty phone sequence");
  return ids;
}

std::string format_alignment(const AlignmentFile& a, const PhoneInventory& inv) {
  validate_alignment(a.segments, a.total_frames, a.utt_id);
  std::string out = "#utt " + a.utt_id + " frames=" + std::to_string(a.total_frames) + "\n";
  for (const auto& s : a.segments) {
    out += inv.symbol(s.phone) + " " + std::to_string(s.start_frame) + " " + std::to_string(s.end_frame) + "\n";
  }
  return out;
}

AlignmentFile parse_alignment(std::string_view text, const PhoneInventory& inv) {
  const auto lines = lines_of(text);
  if (lines.empty()) parse_fail(1, "empty alignment file");
  AlignmentFile a;
  auto [id, frames] = parse_header(lines[0], "frames");
  a.utt_id = id;
  a.total_frames = parse_number<std::size_t>(frames, 1);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto tok = split_ws(lines[i]);
    if (tok.empty()) continue;
    if (tok.size() != 3) parse_fail(i + 1, "expected '<phone> <start> <end>'");
    AlignmentSegment s;
    try {
      s.phone = inv.id(tok[0]);
    } catch (const InputError& e) {
      parse_fail(i + 1, e.what());
    }
    s.start_frame = parse_number<std::size_t>(tok[1], i + 1);
    s.end_frame = parse_number<std::size_t>(tok[2], i + 1);
    a.segments.push_back(s);
  }
  validate_alignment(a.segments, a.total_frames, a.utt_id);
  return a;
}

std::string format_prosody(const ProsodyFile& p, const PhoneInventory& inv) {
  if (p.phones.size() != p.values.size()) throw InputError("prosody file: phone/value count mismatch");
  std::string out = "#utt " + p.utt_id + (p.normalized ? " norm=global\n" : " norm=raw\n");
  for (std::size_t i = 0; i < p.phones.size(); ++i) {
    const auto& v = p.values[i];
    out += inv.symbol(p.phones[i]) + " " + fixed6(v.lf0_z) + " " + fixed6(v.vuv) + " " + fixed6(v.dur_z) + " " +
           fixed6(v.energy_z) + "\n";
  }
  return out;
}

ProsodyFile parse_prosody(std::string_view text, const PhoneInventory& inv) {
  const auto lines = lines_of(text);
  if (lines.empty()) parse_fail(1, "empty prosody file");
  ProsodyFile p;
  auto [id, norm] = parse_header(lines[0], "norm");
  p.utt_id = id;
  if (norm == "global") p.normalized = true;
  else if (norm == "raw") p.normalized = false;
  else parse_fail(1, "norm must be 'global' or 'raw'");
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto tok = split_ws(lines[i]);
    if (tok.empty()) continue;
    if (tok.size() != 5) parse_fail(i + 1, "expected '<phone> <lf0> <vuv> <dur> <energy>'");
    try {
      p.phones.push_back(inv.id(tok[0]));
    } catch (const InputError& e) {
      parse_fail(i + 1, e.what());
    }
    ProsodyVector v;
    v.lf0_z = parse_number<float>(tok[1], i + 1);
    v.vuv = parse_number<float>(tok[2], i + 1);
    v.dur_z = parse_number<float>(tok[3], i + 1);
    v.energy_z = parse_number<float>(tok[4], i + 1);
    if (v.vuv < 0.0f || v.vuv > 1.0f) parse_fail(i + 1, "vuv must lie in [0,1]");
    p.values.push_back(v);
  }
  if (p.phones.empty()) parse_fail(2, "prosody file has no phones");
  return p;
}

std::string format_norm_stats(const NormStats& s) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g %.17g %.17g %.17g\n", s.lf0_mean, s.lf0_std, s.dur_mean,
                s.dur_std, s.energy_mean, s.energy_std);
  return buf;
}

NormStats parse_norm_stats(std::string_view text) {
  const auto lines = lines_of(text);
  if (lines.size() != 1) parse_fail(lines.empty() ? 1 : 2, "norm stats must be exactly one line");
  const auto tok = split_ws(lines[0]);
  if (tok.size() != 6) parse_fail(1, "expected six values");
  NormStats s;
  s.lf0_mean = parse_number<double>(tok[0], 1);
  s.lf0_std = parse_number<double>(tok[1], 1);
  s.dur_mean = parse_number<double>(tok[2], 1);
  s.dur_std = parse_number<double>(tok[3], 1);
  s.energy_mean = parse_number<double>(tok[4], 1);
  s.energy_std = parse_number<double>(tok[5], 1);
  if (!(s.lf0_std > 0 && s.dur_std > 0 && s.energy_std > 0)) parse_fail(1, "standard deviations must be positive");
  return s;
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_f32(std::vector<std::uint8_t>& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }
void put_f64(std::vector<std::uint8_t>& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

void ByteReader::need(std::size_t n, const char* what) const {
  if (remaining() < n) {
    throw IntegrityError(std::string("truncated data reading ") + what + " at byte offset " + std::to_string(pos_));
  }
}

std::uint32_t ByteReader::u32() {
  need(4, "u32");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
  pos_ += 4;
  return v;
}

std::uint64_t ByteReader::u64() {
  need(8, "u64");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
  pos_ += 8;
  return v;
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }
double ByteReader::f64() { return std::bit_cast<double>(u64()); }

std::string ByteReader::str(std::size_t n) {
  need(n, "string");
  std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_), bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
  pos_ += n;
  return s;
}

std::vector<std::uint8_t> encode_mel(const MelSpectrogramData& mel) {
  if (mel.values.size() != mel.frames * mel.n_mels) throw InputError("mel: value count does not match shape");
  std::vector<std::uint8_t> out = {'M', 'E', 'L', '0'};
  put_u32(out, static_cast<std::uint32_t>(mel.frames));
  put_u32(out, static_cast<std::uint32_t>(mel.n_mels));
  out.reserve(out.size() + 4 * mel.values.size());
  for (float v : mel.values) put_f32(out, v);
  return out;
}

MelSpectrogramData decode_mel(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes);
  if (r.str(4) != "MEL0") throw IntegrityError("mel: bad magic at byte offset 0");
  MelSpectrogramData mel;
  mel.frames = r.u32();
  mel.n_mels = r.u32();
  const std::size_t n = mel.frames * mel.n_mels;
  r.need(4 * n, "mel payload");
  mel.values.resize(n);
  for (auto& v : mel.values) v = r.f32();
  if (r.remaining() != 0) throw IntegrityError("mel: trailing bytes at offset " + std::to_string(r.offset()));
  return mel;
}

std::vector<std::uint8_t> encode_wav(const WavData& wav) {
  const auto data_bytes = static_cast<std::uint32_t>(2 * wav.samples.size());
  std::vector<std::uint8_t> out = {'R', 'I', 'F', 'F'};
  put_u32(out, 36 + data_bytes);
  for (char c : std::string("WAVEfmt ")) out.push_back(static_cast<std::uint8_t>(c));
  put_u32(out, 16);
  put_u32(out, 1u | (1u << 16));  // PCM, mono
  put_u32(out, wav.sample_rate);
  put_u32(out, wav.sample_rate * 2);
  put_u32(out, 2u | (16u << 16));  // block align, bits
  for (char c : std::string("data")) out.push_back(static_cast<std::uint8_t>(c));
  put_u32(out, data_bytes);
  for (float s : wav.samples) {
    const auto q = static_cast<std::int16_t>(std::lround(std::clamp(s, -1.0f, 1.0f) * 32767.0f));
    const auto u = static_cast<std::uint16_t>(q);
    out.push_back(static_cast<std::uint8_t>(u & 0xff));
    out.push_back(static_cast<std::uint8_t>(u >> 8));
  }
  return out;
}

WavData decode_wav(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes);
  if (r.str(4) != "RIFF") throw IntegrityError("wav: missing RIFF header");
  r.u32();
  if (r.str(4) != "WAVE") throw IntegrityError("wav: missing WAVE tag");
  WavData wav;
  bool have_fmt = false;
  while (r.remaining() >= 8) {
    const auto id = r.str(4);
    const auto len = r.u32();
    r.need(len, "wav chunk");
    if (id == "fmt ") {
      const auto fmt_ch = r.u32();
      wav.sample_rate = r.u32();
      r.u32();
      const auto align_bits = r.u32();
      if ((fmt_ch & 0xffff) != 1 || (fmt_ch >> 16) != 1 || (align_bits >> 16) != 16) {
        throw InputError("wav: only 16-bit PCM mono is supported");
      }
      r.str(len - 16);
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw IntegrityError("wav: data chunk before fmt chunk");
      const auto raw = r.str(len);
      wav.samples.resize(len / 2);
      for (std::size_t i = 0; i < wav.samples.size(); ++i) {
        const auto u = static_cast<std::uint16_t>(static_cast<std::uint8_t>(raw[2 * i]) |
                                                  (static_cast<std::uint8_t>(raw[2 * i + 1]) << 8));
        wav.samples[i] = static_cast<float>(static_cast<std::int16_t>(u)) / 32767.0f;
      }
      return wav;
    } else {
      r.str(len);
    }
  }
  throw IntegrityError("wav: no data chunk");
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes_atomic(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot move output into place at " + path.string());
  }
}

void write_text_atomic(const std::filesystem::path& path, std::string_view text) {
  write_bytes_atomic(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

}  // namespace pbtts
