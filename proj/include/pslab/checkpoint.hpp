#pragma once

#include <filesystem>
#include <string>

#include "pslab/pipeline.hpp"

namespace pslab {

inline constexpr char kCheckpointMagic[8] = {'P', 'S', 'L', 'B', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string config_hash;
  TrainerState state;
};

/// Little-endian binary layout:
///   magic[8] "PSLBCKPT", u32 version, str config_hash,
///   model config (u32 roi_w, u32 roi_h, u32 n, u32 hidden[n], u32 feat,
///                 u8 dropout site, f64 keep p),
///   u32 n, i32 class identities[n],
///   u32 n, tensors[n] = {str name, u32 rank, u64 dims[rank], f64 values[]},
///   center bank = {u64 dim, f64 alpha, u32 n, {i32 id, f64 center[dim]}[n]},
///   trainer = {u64 seed, i32 stage, i64 iteration, i64 global_step, str rng}.
/// Strings are u32 length + bytes.
std::string serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace pslab
