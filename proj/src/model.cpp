// SPDX-License-Identifier: Apache-2.0

#include "fusetrack/model.hpp"

#include <stdexcept>

namespace fusetrack {

const char* variant_name(HeadVariant v) {
  switch (v) {
    case HeadVariant::dual_selection: return "dual_selection";
    case HeadVariant::rgb_only: return "rgb_only";
    case HeadVariant::thermal_only: return "thermal_only";
    case HeadVariant::concat: return "concat";
  }
  return "dual_selection";
}

HeadVariant parse_variant(const std::string& name) {
  for (auto v : {HeadVariant::dual_selection, HeadVariant::rgb_only, HeadVariant::thermal_only, HeadVariant::concat}) {
    if (name == variant_name(v)) return v;
  }
  throw ContractError("unknown head variant '" + name + "'");
}

void ModelConfig::validate() const {
  const auto& e = embedding;
  if (e.patch == 0 || e.template_side % e.patch != 0 || e.search_side % e.patch != 0) {
    throw ShapeError("model: patch size must divide the template and search sides");
  }
  if (depth == 0) throw ContractError("model: depth must be at least 1");
  if (heads == 0 || e.dim % heads != 0) throw ShapeError("model: heads must divide the model dim");
  if (head_channels < 4 || reliability_channels < 4) throw ContractError("model: head channels must be at least 4");
  grid_side(e.search_tokens());
}

TrackerModel TrackerModel::create(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  TrackerModel m;
  m.config_ = config;
  Rng rng(seed);
  m.embedding = make_embedding_tables(config.embedding, rng);
  m.backbone = Backbone::random(config.backbone(), rng);
  const auto d = config.dim();
  switch (config.variant) {
    case HeadVariant::dual_selection:
      m.center_heads.push_back(CenterHead::random(d, config.head_channels, rng));
      m.center_heads.push_back(CenterHead::random(d, config.head_channels, rng));
      m.reliability_heads.push_back(ReliabilityHead::random(d, config.reliability_channels, rng));
      m.reliability_heads.push_back(ReliabilityHead::random(d, config.reliability_channels, rng));
      break;
    case HeadVariant::rgb_only:
    case HeadVariant::thermal_only:
      m.center_heads.push_back(CenterHead::random(d, config.head_channels, rng));
      break;
    case HeadVariant::concat:
      m.center_heads.push_back(CenterHead::random(2 * d, config.head_channels, rng));
      break;
  }
  return m;
}

ParameterSet TrackerModel::parameters() const {
  ParameterSet ps;
  embedding.register_parameters(ps, "embedding.");
  backbone.register_parameters(ps, "backbone.");
  for (std::size_t i = 0; i < center_heads.size(); ++i)
    center_heads[i].register_parameters(ps, "center" + std::to_string(i) + ".");
  for (std::size_t i = 0; i < reliability_heads.size(); ++i)
    reliability_heads[i].register_parameters(ps, "reliability" + std::to_string(i) + ".");
  return ps;
}

NamedTensors TrackerModel::buffers() const {
  NamedTensors out;
  for (std::size_t i = 0; i < center_heads.size(); ++i)
    center_heads[i].collect_buffers(out, "center" + std::to_string(i) + ".");
  for (std::size_t i = 0; i < reliability_heads.size(); ++i)
    reliability_heads[i].collect_buffers(out, "reliability" + std::to_string(i) + ".");
  return out;
}

NamedTensors TrackerModel::state() const {
  NamedTensors out;
  const auto params = parameters();
  for (const auto& p : params.items()) out.emplace_back(p.name, p.value);
  for (auto& b : buffers()) out.push_back(std::move(b));
  return out;
}

ModelOutput TrackerModel::forward(std::span<const ImagePair> templates, std::span<const ImagePair> searches,
                                  bool training) {
  const auto streams = embed_batch(templates, searches, embedding);
  const auto feats = backbone_forward(streams, backbone);
  ModelOutput out;
  out.batch = feats.batch;
  switch (config_.variant) {
    case HeadVariant::dual_selection: {
      out.maps.push_back(center_head_forward(feats.rgb, center_heads[0], out.batch, training));
      out.maps.push_back(center_head_forward(feats.thermal, center_heads[1], out.batch, training));
      const bool flow = config_.reliability_grad_to_backbone;
      out.r_rgb = reliability_forward(flow ? feats.rgb : feats.rgb.detach(), reliability_heads[0], out.batch, training);
      out.r_t = reliability_forward(flow ? feats.thermal : feats.thermal.detach(), reliability_heads[1], out.batch,
                                    training);
      break;
    }
    case HeadVariant::rgb_only:
      out.maps.push_back(center_head_forward(feats.rgb, center_heads[0], out.batch, training));
      break;
    case HeadVariant::thermal_only:
      out.maps.push_back(center_head_forward(feats.thermal, center_heads[0], out.batch, training));
      break;
    case HeadVariant::concat:
      out.maps.push_back(
          center_head_forward(concat_cols({feats.rgb, feats.thermal}), center_heads[0], out.batch, training));
      break;
  }
  return out;
}

TrackOutput TrackerModel::infer(const ImagePair& template_crop, const ImagePair& search_crop,
                                const std::vector<double>* window) {
  const auto out = forward(std::span(&template_crop, 1), std::span(&search_crop, 1), false);
  if (dual()) {
    return select_output(decode_box(out.maps[0], 0, window), decode_box(out.maps[1], 0, window),
                         make_reliability(out.r_rgb[0], out.r_t[0]));
  }
  // Single-head variants report their one box for both modalities; the
  // reliability slot marks which modality the head reads.
  const auto box = decode_box(out.maps[0], 0, window);
  const double r = config_.variant == HeadVariant::thermal_only ? -1.0 : 1.0;
  return select_output(box, box, make_reliability(config_.variant == HeadVariant::concat ? 0.0 : r, 0.0));
}

}  // namespace fusetrack
