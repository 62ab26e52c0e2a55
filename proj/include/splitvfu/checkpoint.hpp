#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "splitvfu/vfl.hpp"

namespace splitvfu {

struct CheckpointMeta {
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  std::string label;  // "pretrained", "unlearned", "retrained", ...
};

struct Checkpoint {
  VflModel model;
  CheckpointMeta meta;
};

// Binary layout (all integers little-endian, see docs/checkpoint-format.md):
//   "SVFUCKPT" | u32 version | u64 config_hash | u64 seed | u32 header_len |
//   header JSON | u64 n_params | n_params x f64 | u64 FNV-1a of the f64 bytes
void save_checkpoint(const std::filesystem::path& path, const VflModel& model, const CheckpointMeta& meta);
Checkpoint load_checkpoint(const std::filesystem::path& path);

inline constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace splitvfu
