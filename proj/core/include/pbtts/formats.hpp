#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "pbtts/extract.hpp"
#include "pbtts/prosody.hpp"

namespace pbtts {

/// Symbol table mapping phone symbols to contiguous ids.
class PhoneInventory {
 public:
  PhoneInventory() = default;
  PhoneInventory(std::vector<std::string> symbols, std::vector<bool> voiced);

  /// The 16-symbol inventory used by the synthetic corpus.
  static PhoneInventory standard();

  std::size_t size() const { return symbols_.size(); }
  const std::string& symbol(PhoneId id) const;
  bool voiced(PhoneId id) const;
  PhoneId id(std::string_view symbol) const;
  const std::vector<std::string>& symbols() const { return symbols_; }

  /// Whitespace-separated symbols to ids; unknown symbols raise InputError.
  std::vector<PhoneId> parse_sequence(std::string_view text) const;

 private:
  std::vector<std::string> symbols_;
  std::vector<bool> voiced_;
};

struct AlignmentFile {
  std::string utt_id;
  std::size_t total_frames = 0;
  std::vector<AlignmentSegment> segments;
};

std::string format_alignment(const AlignmentFile& a, const PhoneInventory& inv);
AlignmentFile parse_alignment(std::string_view text, const PhoneInventory& inv);

struct ProsodyFile {
  std::string utt_id;
  bool normalized = true;  // header norm=global, otherwise norm=raw
  std::vector<PhoneId> phones;
  ProsodySequence values;
};

/// Six decimal places per value.
std::string format_prosody(const ProsodyFile& p, const PhoneInventory& inv);
ProsodyFile parse_prosody(std::string_view text, const PhoneInventory& inv);

/// Single line, printed with enough digits to round-trip doubles exactly.
std::string format_norm_stats(const NormStats& s);
NormStats parse_norm_stats(std::string_view text);

/// "MEL0", u32 frames, u32 n_mels, f32 little-endian payload.
std::vector<std::uint8_t> encode_mel(const MelSpectrogramData& mel);
MelSpectrogramData decode_mel(const std::vector<std::uint8_t>& bytes);

/// 16-bit PCM mono.
struct WavData {
  std::uint32_t sample_rate = 16000;
  std::vector<float> samples;
};
std::vector<std::uint8_t> encode_wav(const WavData& wav);
WavData decode_wav(const std::vector<std::uint8_t>& bytes);

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);
std::string read_text(const std::filesystem::path& path);
/// Writes to a sibling temporary file and renames it into place.
void write_bytes_atomic(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);
void write_text_atomic(const std::filesystem::path& path, std::string_view text);

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v);
void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v);
void put_f32(std::vector<std::uint8_t>& out, float v);
void put_f64(std::vector<std::uint8_t>& out, double v);

/// Bounds-checked little-endian reader; failures name the byte offset.
class ByteReader {
 public:
  explicit ByteReader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  double f64();
  std::string str(std::size_t n);
  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  void need(std::size_t n, const char* what) const;

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

/// printf-style "%.6f".
std::string fixed6(double v);
/// The float that fixed6(v) parses back to.
float round6(float v);

}  // namespace pbtts
