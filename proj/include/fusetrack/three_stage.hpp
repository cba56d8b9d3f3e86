// SPDX-License-Identifier: Apache-2.0
//
// Latency baseline with the conventional three-stage topology: per-modality
// feature extraction on each image separately, a cross-modal fusion layer,
// then a template/search relation layer. It shares every kernel, the
// embedding and the heads with the unified model, so a timing comparison
// isolates the topology.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fusetrack/model.hpp"
#include "fusetrack/synthetic.hpp"

namespace fusetrack {

struct ThreeStageModel {
  EmbeddingTables embedding;
  std::vector<EncoderLayerParams> extract_rgb;  // depth - 2 layers each
  std::vector<EncoderLayerParams> extract_t;
  EncoderLayerParams fusion;
  EncoderLayerParams relation;
  Tensor final_gain, final_bias;
  std::vector<CenterHead> center_heads;
  std::vector<ReliabilityHead> reliability_heads;
  ModelConfig config;

  // Requires config.depth >= 3 so every stage has at least one layer.
  static ThreeStageModel create(const ModelConfig& config, std::uint64_t seed);

  // Encoder layers on any token's path: extraction + fusion + relation.
  std::size_t layers_per_token() const { return extract_rgb.size() + 2; }
  // Sequential attention phases: rgb extraction, thermal extraction, fusion, relation.
  static constexpr std::size_t kPhases = 4;
};

// Same outputs as TrackerModel::forward for the dual variant.
ModelOutput three_stage_forward(ThreeStageModel& model, std::span<const ImagePair> templates,
                                std::span<const ImagePair> searches);

struct LatencyRow {
  std::size_t dim = 0, depth = 0, heads = 0;
  std::size_t search_tokens = 0, template_tokens = 0;
  double unified_ms = 0.0;
  double three_stage_ms = 0.0;
  std::size_t warmup = 0, samples = 0;
  double ratio() const { return three_stage_ms / unified_ms; }
};

// Median single-pair inference latency of both topologies, timed alternately
// after `warmup` untimed runs of each.
LatencyRow measure_latency(const ModelConfig& config, std::size_t warmup, std::size_t samples, std::uint64_t seed);

std::string latency_csv_header();
std::string latency_csv_row(const LatencyRow& row);

}  // namespace fusetrack
