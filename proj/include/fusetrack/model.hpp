// SPDX-License-Identifier: Apache-2.0
//
// The full tracker: dual embedding, joint backbone, per-modality center heads
// and reliability heads, plus the ablation variants used for comparisons.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fusetrack/backbone.hpp"
#include "fusetrack/embedding.hpp"
#include "fusetrack/heads.hpp"
#include "fusetrack/optim.hpp"

namespace fusetrack {

enum class HeadVariant {
  dual_selection,  // one center head and one reliability head per modality
  rgb_only,        // a single center head on the RGB search features
  thermal_only,    // a single center head on the thermal search features
  concat,          // a single center head on channel-concatenated features
};
const char* variant_name(HeadVariant v);
HeadVariant parse_variant(const std::string& name);

struct ModelConfig {
  EmbeddingConfig embedding;  // embedding.dim is the model dim
  std::size_t depth = 4;
  std::size_t heads = 4;
  std::size_t head_channels = 32;
  std::size_t reliability_channels = 32;
  HeadVariant variant = HeadVariant::dual_selection;
  // When false the reliability heads see detached features.
  bool reliability_grad_to_backbone = true;

  std::size_t dim() const { return embedding.dim; }
  BackboneConfig backbone() const { return {embedding.dim, depth, heads}; }
  void validate() const;
};

struct ModelOutput {
  std::vector<PredictionMaps> maps;  // [rgb, thermal] for dual, one entry otherwise
  Tensor r_rgb;                      // [batch, 1]; empty unless dual
  Tensor r_t;
  std::size_t batch = 1;
};

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

class TrackerModel {
 public:
  static TrackerModel create(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  bool dual() const { return config_.variant == HeadVariant::dual_selection; }

  // Trainable parameters with optimizer groups: embedding and backbone are
  // `backbone`, heads are `other`.
  ParameterSet parameters() const;
  // Batch-norm running statistics.
  NamedTensors buffers() const;
  // Parameters followed by buffers, each under a unique name.
  NamedTensors state() const;

  ModelOutput forward(std::span<const ImagePair> templates, std::span<const ImagePair> searches, bool training);

  // Single-sample inference: both decoded boxes (normalized search
  // coordinates), reliability and the selected output.
  TrackOutput infer(const ImagePair& template_crop, const ImagePair& search_crop,
                    const std::vector<double>* window = nullptr);

  EmbeddingTables embedding;
  Backbone backbone;
  std::vector<CenterHead> center_heads;
  std::vector<ReliabilityHead> reliability_heads;

 private:
  ModelConfig config_;
};

}  // namespace fusetrack
