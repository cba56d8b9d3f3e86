// SPDX-License-Identifier: Apache-2.0
//
// Run configuration as flat `section.key=value` text. Lines starting with `#`
// and blank lines are ignored. Serialization writes every key in schema
// order, so write -> parse -> write is byte-identical.

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "fusetrack/crop.hpp"
#include "fusetrack/model.hpp"
#include "fusetrack/track.hpp"
#include "fusetrack/train.hpp"

namespace fusetrack {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EvalConfig {
  double tau = kDefaultPrecisionThreshold;
  HeldOutSpec held_out;  // held_out.scene mirrors the data scene
};

struct BenchConfig {
  std::vector<std::size_t> dims{32, 64, 128};
  std::size_t warmup = 10;
  std::size_t samples = 30;
  std::uint64_t seed = 7;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  Curriculum data;
  double template_factor = 2.0;
  double search_factor = 4.0;
  EvalConfig eval;
  bool hanning = true;
  BenchConfig bench;

  CropConfig crop() const;
  TrackOptions track_options() const { return {crop(), hanning}; }
  // Cross-field checks; throws ConfigError naming the offending key.
  void validate() const;
};

// Unknown keys and malformed values raise ConfigError naming the key and line.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);
std::string config_to_text(const RunConfig& config);
// The `model.*` subset, used by checkpoints.
std::string model_config_to_text(const ModelConfig& config);
ModelConfig parse_model_config(const std::string& text);
// Every line of config_to_text prefixed with `# `, for result provenance.
std::string config_provenance(const RunConfig& config);

// The training sample stream and the freshly initialized model a run uses;
// both derive from train.seed.
SampleSource make_training_source(const RunConfig& config);
TrackerModel make_model(const RunConfig& config);

// Field names in schema order.
std::vector<std::string> config_keys();

}  // namespace fusetrack
