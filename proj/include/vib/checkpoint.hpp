#pragma once

#include <cstdint>
#include <filesystem>

#include "vib/train.hpp"

namespace vib {

inline constexpr char kCheckpointMagic[8] = {'V', 'I', 'B', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelSpec spec;
  ObjectiveConfig objective;
  TrainConfig train;
  TrainingState state;
};

/// magic | u32 version | u64 header length | JSON header | f64 params, ema, adam m, adam v
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace vib
