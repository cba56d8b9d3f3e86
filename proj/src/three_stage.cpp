// SPDX-License-Identifier: Apache-2.0

#include "fusetrack/three_stage.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>

namespace fusetrack {

namespace {

Tensor run_layers(const Tensor& tokens, std::size_t batch, const std::vector<EncoderLayerParams>& layers) {
  JointTokenState s{tokens, SegmentLayout({tokens.rows() / batch, 0, 0, 0}), batch};
  for (const auto& l : layers) s = encoder_layer(s, l);
  return s.h;
}

// Per-sample interleave of two row blocks: [a_0; b_0; a_1; b_1; ...].
Tensor interleave(const Tensor& a, const Tensor& b, std::size_t batch) {
  const auto na = a.rows() / batch, nb = b.rows() / batch;
  std::vector<std::size_t> idx;
  for (std::size_t s = 0; s < batch; ++s) {
    for (std::size_t i = 0; i < na; ++i) idx.push_back(s * na + i);
    for (std::size_t i = 0; i < nb; ++i) idx.push_back(batch * na + s * nb + i);
  }
  return gather_rows(concat_rows({a, b}), std::move(idx));
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

ThreeStageModel ThreeStageModel::create(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  if (config.depth < 3) throw ContractError("three-stage baseline needs depth >= 3");
  ThreeStageModel m;
  m.config = config;
  Rng rng(seed);
  m.embedding = make_embedding_tables(config.embedding, rng);
  const auto d = config.dim();
  for (std::size_t i = 0; i + 2 < config.depth; ++i) {
    m.extract_rgb.push_back(EncoderLayerParams::random(d, config.heads, rng));
    m.extract_t.push_back(EncoderLayerParams::random(d, config.heads, rng));
  }
  m.fusion = EncoderLayerParams::random(d, config.heads, rng);
  m.relation = EncoderLayerParams::random(d, config.heads, rng);
  m.final_gain = Tensor::full({d}, 1.0, true);
  m.final_bias = Tensor::zeros({d}, true);
  for (int i = 0; i < 2; ++i) {
    m.center_heads.push_back(CenterHead::random(d, config.head_channels, rng));
    m.reliability_heads.push_back(ReliabilityHead::random(d, config.reliability_channels, rng));
  }
  return m;
}

ModelOutput three_stage_forward(ThreeStageModel& model, std::span<const ImagePair> templates,
                                std::span<const ImagePair> searches) {
  const auto streams = embed_batch(templates, searches, model.embedding);
  const auto batch = streams[0].batch;
  const auto nx = streams[0].tokens_per_sample(), nz = streams[2].tokens_per_sample();

  // Stage 1: each image through its modality's extractor on its own.
  Tensor x_rgb = run_layers(streams[0].tokens, batch, model.extract_rgb);
  Tensor z_rgb = run_layers(streams[2].tokens, batch, model.extract_rgb);
  Tensor x_t = run_layers(streams[1].tokens, batch, model.extract_t);
  Tensor z_t = run_layers(streams[3].tokens, batch, model.extract_t);

  // Stage 2: cross-modal fusion, search and template separately.
  JointTokenState xs{interleave(x_rgb, x_t, batch), SegmentLayout({nx, nx, 0, 0}), batch};
  JointTokenState zs{interleave(z_rgb, z_t, batch), SegmentLayout({0, 0, nz, nz}), batch};
  xs = encoder_layer(xs, model.fusion);
  zs = encoder_layer(zs, model.fusion);

  // Stage 3: relation modeling over search and template together.
  JointTokenState all{interleave(xs.h, zs.h, batch), SegmentLayout({nx, nx, nz, nz}), batch};
  all = encoder_layer(all, model.relation);
  Tensor h = layer_norm(all.h, model.final_gain, model.final_bias);
  Tensor f_rgb = gather_rows(h, segment_rows(all.layout, batch, StreamId::x_rgb));
  Tensor f_t = gather_rows(h, segment_rows(all.layout, batch, StreamId::x_t));

  ModelOutput out;
  out.batch = batch;
  out.maps.push_back(center_head_forward(f_rgb, model.center_heads[0], batch, false));
  out.maps.push_back(center_head_forward(f_t, model.center_heads[1], batch, false));
  out.r_rgb = reliability_forward(f_rgb, model.reliability_heads[0], batch, false);
  out.r_t = reliability_forward(f_t, model.reliability_heads[1], batch, false);
  return out;
}

LatencyRow measure_latency(const ModelConfig& config, std::size_t warmup, std::size_t samples, std::uint64_t seed) {
  ModelConfig c = config;
  c.variant = HeadVariant::dual_selection;
  auto unified = TrackerModel::create(c, seed);
  auto staged = ThreeStageModel::create(c, seed);
  Rng rng(mix_seed(seed, 0x1a7e));
  const auto& e = c.embedding;
  const ImagePair z{rng.uniform_tensor({e.template_side, e.template_side, 3}, 0, 1),
                    rng.uniform_tensor({e.template_side, e.template_side, 3}, 0, 1)};
  const ImagePair x{rng.uniform_tensor({e.search_side, e.search_side, 3}, 0, 1),
                    rng.uniform_tensor({e.search_side, e.search_side, 3}, 0, 1)};
  const std::span zs(&z, 1), xs(&x, 1);

  using clock = std::chrono::steady_clock;
  auto time_ms = [](auto&& fn) {
    const auto t0 = clock::now();
    fn();
    return std::chrono::duration<double, std::milli>(clock::now() - t0).count();
  };
  for (std::size_t i = 0; i < warmup; ++i) {
    unified.forward(zs, xs, false);
    three_stage_forward(staged, zs, xs);
  }
  std::vector<double> tu, ts;
  for (std::size_t i = 0; i < samples; ++i) {
    tu.push_back(time_ms([&] { unified.forward(zs, xs, false); }));
    ts.push_back(time_ms([&] { three_stage_forward(staged, zs, xs); }));
  }
  LatencyRow row;
  row.dim = c.dim();
  row.depth = c.depth;
  row.heads = c.heads;
  row.search_tokens = e.search_tokens();
  row.template_tokens = e.template_tokens();
  row.unified_ms = median(tu);
  row.three_stage_ms = median(ts);
  row.warmup = warmup;
  row.samples = samples;
  return row;
}

std::string latency_csv_header() {
  return "dim,depth,heads,search_tokens,template_tokens,unified_ms,three_stage_ms,ratio,warmup,samples";
}

std::string latency_csv_row(const LatencyRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%zu,%zu,%zu,%zu,%.6f,%.6f,%.6f,%zu,%zu", r.dim, r.depth, r.heads,
                r.search_tokens, r.template_tokens, r.unified_ms, r.three_stage_ms, r.ratio(), r.warmup, r.samples);
  return buf;
}

}  // namespace fusetrack
