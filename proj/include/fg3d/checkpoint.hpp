// SPDX-License-Identifier: Apache-2.0
//
// Binary checkpoint: "FGPV", u32 version, then length-prefixed config text,
// RNG state and metadata strings, then named tensor records (name, rank,
// u64 dims, float32 little-endian payload). Integers are little-endian.
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace fg3d {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TensorRecord {
  std::vector<std::size_t> dims;
  std::vector<double> values;  // float32-representable after a round trip
};

struct Checkpoint {
  std::string config_text;
  std::string rng_state;
  std::string metadata;
  std::map<std::string, TensorRecord> tensors;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
/// Throws VersionError on a version mismatch, DataError on bad magic or a
/// truncated file.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Rounds to the nearest float32, as the checkpoint payload does.
inline double to_single(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace fg3d
