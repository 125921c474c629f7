#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "pbtts/error.hpp"
#include "pbtts/formats.hpp"

using namespace pbtts;

TEST(Inventory, StandardSymbols) {
  const auto inv = PhoneInventory::standard();
  EXPECT_EQ(inv.size(), 16u);
  EXPECT_EQ(inv.id("sh"), 14);
  EXPECT_FALSE(inv.voiced(inv.id("s")));
  EXPECT_TRUE(inv.voiced(inv.id("m")));
  EXPECT_EQ(inv.parse_sequence(" aa  m\tt "), (std::vector<PhoneId>{0, 8, 15}));
  EXPECT_THROW(inv.parse_sequence("aa zz"), InputError);
  EXPECT_THROW(inv.parse_sequence("   "), InputError);
  EXPECT_THROW(PhoneInventory({"a", "a"}, {true, true}), ConfigError);
}

TEST(AlignmentFormat, RoundTrip) {
  const auto inv = PhoneInventory::standard();
  AlignmentFile a{"u7", 9, {{0, 0, 3}, {12, 3, 5}, {6, 5, 9}}};
  const auto text = format_alignment(a, inv);
  EXPECT_EQ(text, "#utt u7 frames=9\naa 0 3\ns 3 5\now 5 9\n");
  const auto b = parse_alignment(text, inv);
  EXPECT_EQ(b.utt_id, "u7");
  EXPECT_EQ(b.total_frames, 9u);
  ASSERT_EQ(b.segments.size(), 3u);
  EXPECT_EQ(b.segments[1].phone, 12);
  EXPECT_EQ(b.segments[2].end_frame, 9u);
}

TEST(AlignmentFormat, Errors) {
  const auto inv = PhoneInventory::standard();
  EXPECT_THROW(parse_alignment("#utt u frames=4\naa 0 2\nm 2 5\n", inv), AlignmentError);
  try {
    parse_alignment("#utt u frames=4\naa 0 2\nm 2 x\n", inv);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
  EXPECT_THROW(parse_alignment("utt u frames=4\n", inv), ParseError);
  EXPECT_THROW(parse_alignment("#utt u frames=4\nqq 0 4\n", inv), ParseError);
}

TEST(ProsodyFormat, SixDecimalsAndRoundTrip) {
  const auto inv = PhoneInventory::standard();
  ProsodyFile p{"x", true, {0, 12}, {{0.1234567f, 1.0f, -1.5f, 2.0f}, {0.0f, 0.0f, 0.25f, -0.0000001f}}};
  const auto text = format_prosody(p, inv);
  EXPECT_EQ(text, "#utt x norm=global\naa 0.123457 1.000000 -1.500000 2.000000\ns 0.000000 0.000000 0.250000 0.000000\n");
  const auto q = parse_prosody(text, inv);
  EXPECT_TRUE(q.normalized);
  EXPECT_EQ(q.phones, p.phones);
  EXPECT_FLOAT_EQ(q.values[0].lf0_z, 0.123457f);
  EXPECT_EQ(format_prosody(q, inv), text);
  EXPECT_FALSE(parse_prosody("#utt y norm=raw\naa 5.3 1 4 0.1\n", inv).normalized);
  EXPECT_THROW(parse_prosody("#utt y norm=other\naa 5.3 1 4 0.1\n", inv), ParseError);
  EXPECT_THROW(parse_prosody("#utt y norm=raw\naa 5.3 1.5 4 0.1\n", inv), ParseError);
  EXPECT_THROW(parse_prosody("#utt y norm=raw\naa 5.3 1 4\n", inv), ParseError);
  EXPECT_THROW(parse_prosody("#utt y norm=raw\naa nan 1 4 0.1\n", inv), ParseError);
}

TEST(NormStatsFormat, ExactRoundTrip) {
  NormStats s{5.123456789012345, 0.3333333333333333, 1.1, 0.2, 0.0123, 1e-3};
  const auto back = parse_norm_stats(format_norm_stats(s));
  EXPECT_EQ(back, s);
  EXPECT_THROW(parse_norm_stats("1 2 3 4 5"), ParseError);
  EXPECT_THROW(parse_norm_stats("1 0 3 4 5 6"), ParseError);
}

TEST(MelFormat, LayoutAndRoundTrip) {
  MelSpectrogramData m{2, 3, {1.0f, -2.5f, 3.25f, 0.0f, std::numeric_limits<float>::denorm_min(), -0.0f}};
  const auto bytes = encode_mel(m);
  ASSERT_EQ(bytes.size(), 12u + 24u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "MEL0");
  EXPECT_EQ(bytes[4], 2);
  EXPECT_EQ(bytes[8], 3);
  // 1.0f little-endian is 00 00 80 3f.
  EXPECT_EQ(bytes[12], 0x00);
  EXPECT_EQ(bytes[15], 0x3f);
  const auto back = decode_mel(bytes);
  EXPECT_EQ(back.frames, 2u);
  EXPECT_EQ(encode_mel(back), bytes);
  auto truncated = bytes;
  truncated.pop_back();
  EXPECT_THROW(decode_mel(truncated), IntegrityError);
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_mel(bad), IntegrityError);
}

TEST(WavFormat, RoundTripWithinQuantization) {
  WavData w{16000, {0.0f, 0.5f, -0.5f, 1.0f, -1.0f, 0.123f}};
  const auto back = decode_wav(encode_wav(w));
  EXPECT_EQ(back.sample_rate, 16000u);
  ASSERT_EQ(back.samples.size(), w.samples.size());
  for (std::size_t i = 0; i < w.samples.size(); ++i) EXPECT_NEAR(back.samples[i], w.samples[i], 1.0 / 32767.0);
}

TEST(AtomicWrite, ReplacesContentAndLeavesNoTemp) {
  const auto dir = std::filesystem::temp_directory_path() / "pbtts_formats_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "a.txt";
  write_text_atomic(path, "one");
  write_text_atomic(path, "two");
  EXPECT_EQ(read_text(path), "two");
  EXPECT_FALSE(std::filesystem::exists(dir / "a.txt.tmp"));
  EXPECT_THROW(read_text(dir / "missing"), IoError);
  std::filesystem::remove_all(dir);
}
