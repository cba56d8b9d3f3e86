// SPDX-License-Identifier: Apache-2.0
//
// Binary checkpoints. Layout (all integers little-endian):
//
//   8 bytes   magic "FTRKCKPT"
//   u32       format version
//   u64 + n   model hyperparameters as `model.*` config text
//   u64 + n   full run config text (provenance, may be empty)
//   u64       training step
//   u32       tensor count, then per tensor:
//               u32 + n name, u32 rank, u64 dims[rank], f64 values (LE)
//   u32       optimizer moment count (0 when absent), then per moment pair:
//               u64 length, f64 first[length], f64 second[length]

#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fusetrack/model.hpp"

namespace fusetrack {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Wrong magic, unsupported version, or a checkpoint that does not fit the model.
class VersionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  ModelConfig config;
  std::string run_config;  // provenance only; not interpreted on load
  std::uint64_t step = 0;
  NamedTensors tensors;  // TrackerModel::state() order
  std::vector<std::vector<double>> first_moments;
  std::vector<std::vector<double>> second_moments;
};

Checkpoint make_checkpoint(const TrackerModel& model, const AdamW* optimizer = nullptr);

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Builds a model with the checkpoint's config and copies every tensor in.
TrackerModel model_from_checkpoint(const Checkpoint& ckpt);

// Copies tensors into an existing model; names and shapes must match exactly.
void apply_state(TrackerModel& model, const Checkpoint& ckpt);
// Restores moments and step count; moment lengths must match the parameters.
void apply_optimizer_state(AdamW& optimizer, const Checkpoint& ckpt);

// FNV-1a 64 of the serialized bytes, as 16 hex digits.
std::string checkpoint_digest(const Checkpoint& ckpt);

}  // namespace fusetrack
