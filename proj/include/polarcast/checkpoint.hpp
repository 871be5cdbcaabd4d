#pragma once

// Checkpoint layout (one directory per model):
//
//   manifest.json   {"format": "polarcast-checkpoint", "version": 1, "arch": {...},
//                    "seed": N, "setting": "sgd-dropout-complete", "epoch": N,
//                    "val_loss": x, "tensors": [{"name", "shape", "file", "dtype"}]}
//   <name>.f32      raw little-endian float32, row-major in the listed shape
//
// Loading reproduces the saved parameters bit for bit.

#include <cstdint>
#include <filesystem>
#include <string>

#include "polarcast/netcore.hpp"

namespace polarcast {

struct CheckpointMeta {
  ArchConfig arch;
  std::uint64_t seed = 0;
  std::string setting;
  std::size_t epoch = 0;
  double val_loss = 0.0;
};

struct Checkpoint {
  ModelParams params;
  CheckpointMeta meta;
};

void save_checkpoint(const std::filesystem::path& dir, const ModelParams& params,
                     const CheckpointMeta& meta);

Checkpoint load_checkpoint(const std::filesystem::path& dir);

// FNV-1a over tensor names, shapes and raw bytes.
std::uint64_t params_digest(const ModelParams& params);

std::string hex_digest(std::uint64_t d);

}  // namespace polarcast
