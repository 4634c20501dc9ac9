#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "saf/model.hpp"

namespace saf {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  std::string dataset;
  std::string variant;
  std::size_t epoch = 0;
  std::uint64_t seed = 0;
  std::string config_json = "{}";  // resolved training config, opaque here
};

/// Layout: "SAFCKPT\0", u32 version, u64 header length, JSON header (meta and
/// model spec), u32 tensor count, per tensor {u32 name length, name, u8 dtype,
/// u32 rank, u64 dims[rank], little-endian data}, then the SHA-256 of all
/// preceding bytes.
std::string serialize_checkpoint(const Model<float>& model, const CheckpointMeta& meta);
void save_checkpoint(const Model<float>& model, const CheckpointMeta& meta, const std::filesystem::path& path);

struct LoadedCheckpoint {
  Model<float> model;
  CheckpointMeta meta;
};

/// DataError on bad magic, unsupported version, hash mismatch or truncation.
LoadedCheckpoint parse_checkpoint(const std::string& bytes);
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

/// Loads into an existing model; DataError unless dataset, variant and
/// architecture match.
CheckpointMeta load_checkpoint_into(Model<float>& model, const std::filesystem::path& path);

}  // namespace saf
