#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "pbtts/config.hpp"
#include "pbtts/model.hpp"
#include "pbtts/prosody.hpp"
#include "pbtts/trainer.hpp"

namespace pbtts {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig model;
  TrainConfig train;
  NormStats stats;
  ParamStore<float> params;
  /// Adam moments of trainable tensors; optimizer.step is the step counter.
  OptimizerState optimizer;
};

/// "PBTN", u32 version, then length-prefixed sections. Every section ends in
/// a CRC-32 of its bytes; tensors are written in name order.
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
/// IntegrityError (with byte offset) on corruption, VersionError on an
/// unsupported version.
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Field-by-field, bit-level equality.
bool checkpoints_identical(const Checkpoint& a, const Checkpoint& b);

/// Throws ConfigError when `resume` cannot continue under `model`.
void check_resume_compatible(const Checkpoint& resume, const ModelConfig& model);

}  // namespace pbtts
