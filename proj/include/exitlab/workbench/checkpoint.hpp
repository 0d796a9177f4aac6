#pragma once

#include <cstdint>
#include <string>

#include "exitlab/multiexit/model.hpp"

namespace exitlab {

inline constexpr char kCheckpointMagic[] = "MXCKPT01";
inline constexpr int kCheckpointVersion = 1;

struct CheckpointMeta {
  std::string regime;
  std::string scaling;
  std::uint64_t seed = 0;
  std::string dataset;
  std::string run_config;  // materialised RunConfig JSON, may be empty
};

struct Checkpoint {
  MultiExitModel model;
  CheckpointMeta meta;
};

// Layout: magic, u64 LE header length, JSON header (config, meta, parameter
// manifest), raw LE f64 arrays in manifest order, u32 LE CRC-32 of all
// preceding bytes.
std::string encode_checkpoint(const MultiExitModel& model, const CheckpointMeta& meta);
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const MultiExitModel& model, const CheckpointMeta& meta, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace exitlab
