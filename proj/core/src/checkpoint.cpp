#include "pbtts/checkpoint.hpp"

#include <bit>
#include <cstring>

#include <zlib.h>

#include "pbtts/error.hpp"
#include "pbtts/formats.hpp"

namespace pbtts {

namespace {

constexpr char kMagic[4] = {'P', 'B', 'T', 'N'};
constexpr std::uint32_t kTensorTag = 0x524E5354;  // "TSNR"
constexpr std::uint32_t kMomentTag = 0x544D4441;  // "ADMT"

std::uint32_t crc_of(const std::vector<std::uint8_t>& bytes, std::size_t from, std::size_t to) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  if (to > from) crc = ::crc32(crc, bytes.data() + from, static_cast<uInt>(to - from));
  return static_cast<std::uint32_t>(crc);
}

void put_str(std::vector<std::uint8_t>& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

void put_floats(std::vector<std::uint8_t>& out, std::span<const float> v) {
  put_u64(out, v.size());
  for (float x : v) put_f32(out, x);
}

void seal(std::vector<std::uint8_t>& out, std::size_t start) { put_u32(out, crc_of(out, start, out.size())); }

void check_seal(const std::vector<std::uint8_t>& bytes, ByteReader& r, std::size_t start, const std::string& what) {
  const std::size_t at = r.offset();
  const auto expected = crc_of(bytes, start, at);
  if (r.u32() != expected) {
    throw IntegrityError("checksum mismatch in " + what + " (bytes " + std::to_string(start) + ".." +
                         std::to_string(at) + ", checksum at byte offset " + std::to_string(at) + ")");
  }
}

std::string get_str(ByteReader& r, std::size_t limit) {
  const std::size_t at = r.offset();
  const auto n = r.u32();
  if (n > limit) throw IntegrityError("implausible string length " + std::to_string(n) + " at byte offset " +
                                      std::to_string(at));
  return r.str(n);
}

std::vector<float> get_floats(ByteReader& r) {
  const std::size_t at = r.offset();
  const auto n = r.u64();
  if (n > r.remaining() / 4) {
    throw IntegrityError("value count " + std::to_string(n) + " at byte offset " + std::to_string(at) +
                         " exceeds the remaining data");
  }
  std::vector<float> v(n);
  for (auto& x : v) x = r.f32();
  return v;
}

bool same_bits(std::span<const float> a, std::span<const float> b) {
  return a.size() == b.size() && (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_u32(out, kCheckpointVersion);

  std::size_t start = out.size();
  put_str(out, format_config(Config{ckpt.model, ckpt.train, {}}, false));
  for (double v : {ckpt.stats.lf0_mean, ckpt.stats.lf0_std, ckpt.stats.dur_mean, ckpt.stats.dur_std,
                   ckpt.stats.energy_mean, ckpt.stats.energy_std}) {
    put_f64(out, v);
  }
  put_u64(out, ckpt.optimizer.step);
  seal(out, start);

  put_u32(out, static_cast<std::uint32_t>(ckpt.params.size()));
  for (const auto& p : ckpt.params.entries()) {
    start = out.size();
    put_u32(out, kTensorTag);
    put_str(out, p.name);
    put_str(out, p.group);
    put_u32(out, static_cast<std::uint32_t>(p.tensor.rank()));
    for (std::size_t d : p.tensor.shape()) put_u64(out, d);
    put_floats(out, p.tensor.data());
    seal(out, start);
  }

  put_u32(out, static_cast<std::uint32_t>(ckpt.optimizer.m.size()));
  for (const auto& [name, m] : ckpt.optimizer.m) {
    const auto it = ckpt.optimizer.v.find(name);
    if (it == ckpt.optimizer.v.end()) throw ContractError("optimizer state for " + name + " lacks second moments");
    start = out.size();
    put_u32(out, kMomentTag);
    put_str(out, name);
    put_floats(out, m);
    put_floats(out, it->second);
    seal(out, start);
  }
  return out;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes);
  r.need(4, "magic");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw IntegrityError("not a checkpoint: bad magic at byte offset 0");
  r.str(4);
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw VersionError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                       std::to_string(kCheckpointVersion) + ")");
  }

  Checkpoint ckpt;
  std::size_t start = r.offset();
  const auto text = get_str(r, bytes.size());
  double stats[6];
  for (double& v : stats) v = r.f64();
  ckpt.optimizer.step = r.u64();
  check_seal(bytes, r, start, "configuration section");
  try {
    const auto cfg = parse_config_text(text);
    ckpt.model = cfg.model;
    ckpt.train = cfg.train;
  } catch (const Error& e) {
    throw IntegrityError(std::string("checkpoint configuration is unreadable: ") + e.what());
  }
  ckpt.stats = {stats[0], stats[1], stats[2], stats[3], stats[4], stats[5]};

  const auto n_tensors = r.u32();
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    start = r.offset();
    if (r.u32() != kTensorTag) throw IntegrityError("expected a tensor record at byte offset " + std::to_string(start));
    auto name = get_str(r, 4096);
    auto group = get_str(r, 4096);
    const auto rank = r.u32();
    if (rank > 8) throw IntegrityError("implausible tensor rank at byte offset " + std::to_string(r.offset() - 4));
    Shape shape(rank);
    for (auto& d : shape) d = r.u64();
    const std::size_t values_at = r.offset();
    auto values = get_floats(r);
    if (values.size() != shape_numel(shape)) {
      throw IntegrityError("tensor " + name + ": " + std::to_string(values.size()) + " values for shape " +
                           shape_str(shape) + " at byte offset " + std::to_string(values_at));
    }
    check_seal(bytes, r, start, "tensor " + name);
    try {
      ckpt.params.add(std::move(name), std::move(group), Tensor<float>(std::move(shape), std::move(values)));
    } catch (const ContractError& e) {
      throw IntegrityError(std::string(e.what()) + " at byte offset " + std::to_string(start));
    }
  }

  const auto n_moments = r.u32();
  for (std::uint32_t i = 0; i < n_moments; ++i) {
    start = r.offset();
    if (r.u32() != kMomentTag) {
      throw IntegrityError("expected an optimizer record at byte offset " + std::to_string(start));
    }
    auto name = get_str(r, 4096);
    auto m = get_floats(r);
    auto v = get_floats(r);
    check_seal(bytes, r, start, "optimizer state of " + name);
    ckpt.optimizer.m[name] = std::move(m);
    ckpt.optimizer.v[name] = std::move(v);
  }
  if (r.remaining() != 0) {
    throw IntegrityError(std::to_string(r.remaining()) + " trailing bytes at byte offset " + std::to_string(r.offset()));
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_bytes_atomic(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_bytes(path)); }

bool checkpoints_identical(const Checkpoint& a, const Checkpoint& b) {
  if (!(a.model == b.model) || !(a.train == b.train)) return false;
  const double sa[6] = {a.stats.lf0_mean, a.stats.lf0_std, a.stats.dur_mean, a.stats.dur_std, a.stats.energy_mean,
                        a.stats.energy_std};
  const double sb[6] = {b.stats.lf0_mean, b.stats.lf0_std, b.stats.dur_mean, b.stats.dur_std, b.stats.energy_mean,
                        b.stats.energy_std};
  if (std::memcmp(sa, sb, sizeof sa) != 0) return false;
  if (!params_identical(a.params, b.params)) return false;
  if (a.optimizer.step != b.optimizer.step || a.optimizer.m.size() != b.optimizer.m.size() ||
      a.optimizer.v.size() != b.optimizer.v.size()) {
    return false;
  }
  for (const auto& [name, m] : a.optimizer.m) {
    const auto it = b.optimizer.m.find(name);
    if (it == b.optimizer.m.end() || !same_bits(m, it->second)) return false;
  }
  for (const auto& [name, v] : a.optimizer.v) {
    const auto it = b.optimizer.v.find(name);
    if (it == b.optimizer.v.end() || !same_bits(v, it->second)) return false;
  }
  return true;
}

void check_resume_compatible(const Checkpoint& resume, const ModelConfig& model) {
  if (!(resume.model == model)) {
    throw ConfigError("checkpoint model configuration differs from the requested one; resume needs identical [model]");
  }
  const auto fresh = init_params(model);
  for (const auto& p : fresh.entries()) {
    if (!resume.params.contains(p.name)) throw ConfigError("checkpoint lacks parameter " + p.name);
    if (resume.params.get(p.name).shape() != p.tensor.shape()) {
      throw ConfigError("checkpoint parameter " + p.name + " has shape " +
                        shape_str(resume.params.get(p.name).shape()) + ", expected " + shape_str(p.tensor.shape()));
    }
  }
}

}  // namespace pbtts
