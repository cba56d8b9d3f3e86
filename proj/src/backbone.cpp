// SPDX-License-Identifier: Apache-2.0

#include "fusetrack/backbone.hpp"

#include <algorithm>
#include <cmath>

namespace fusetrack {

SegmentLayout::SegmentLayout(std::array<std::size_t, 4> counts) : counts_(counts) {
  std::size_t off = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    offsets_[i] = off;
    off += counts_[i];
  }
  total_ = off;
  if (total_ == 0) throw ShapeError("segment layout must contain at least one row");
}

EncoderLayerParams EncoderLayerParams::random(std::size_t dim, std::size_t heads, Rng& rng) {
  if (heads == 0 || dim % heads != 0) throw ShapeError("head count must divide the model dim");
  constexpr double kStd = 0.02;
  EncoderLayerParams p;
  p.heads = heads;
  p.wq = rng.truncated_normal_tensor({dim, dim}, kStd);
  p.wk = rng.truncated_normal_tensor({dim, dim}, kStd);
  p.wv = rng.truncated_normal_tensor({dim, dim}, kStd);
  p.wo = rng.truncated_normal_tensor({dim, dim}, kStd);
  p.w1 = rng.truncated_normal_tensor({dim, 4 * dim}, kStd);
  p.w2 = rng.truncated_normal_tensor({4 * dim, dim}, kStd);
  p.bq = Tensor::zeros({dim}, true);
  p.bk = Tensor::zeros({dim}, true);
  p.bv = Tensor::zeros({dim}, true);
  p.bo = Tensor::zeros({dim}, true);
  p.b1 = Tensor::zeros({4 * dim}, true);
  p.b2 = Tensor::zeros({dim}, true);
  p.ln1_gain = Tensor::full({dim}, 1.0, true);
  p.ln1_bias = Tensor::zeros({dim}, true);
  p.ln2_gain = Tensor::full({dim}, 1.0, true);
  p.ln2_bias = Tensor::zeros({dim}, true);
  return p;
}

void EncoderLayerParams::register_parameters(ParameterSet& params, const std::string& prefix) const {
  const std::pair<const char*, const Tensor*> named[] = {
      {"wq", &wq}, {"bq", &bq}, {"wk", &wk}, {"bk", &bk}, {"wv", &wv}, {"bv", &bv},
      {"wo", &wo}, {"bo", &bo}, {"w1", &w1}, {"b1", &b1}, {"w2", &w2}, {"b2", &b2},
      {"ln1_gain", &ln1_gain}, {"ln1_bias", &ln1_bias}, {"ln2_gain", &ln2_gain}, {"ln2_bias", &ln2_bias}};
  for (const auto& [name, t] : named) params.add(prefix + name, *t, ParamGroup::backbone);
}

// --- Decomposition ----------------------------------------------------------

AttentionDecomposition::AttentionDecomposition(SegmentLayout layout, std::size_t heads, std::size_t dim,
                                               std::vector<std::vector<double>> head_weights)
    : layout_(layout), heads_(heads), dim_(dim), weights_(std::move(head_weights)) {
  const auto t = layout_.total();
  if (weights_.size() != heads_) throw ContractError("decomposition: one weight matrix per head expected");
  for (const auto& w : weights_) {
    if (w.size() != t * t) throw ContractError("decomposition: weight matrix does not match the layout");
  }
}

Tensor AttentionDecomposition::head_matrix(std::size_t head) const {
  const auto t = layout_.total();
  return Tensor::from({t, t}, weights_.at(head));
}

Tensor AttentionDecomposition::head_block(std::size_t head, StreamId query, StreamId key) const {
  const auto t = layout_.total();
  const auto qr = layout_.range(query), kr = layout_.range(key);
  if (qr.size() == 0 || kr.size() == 0) throw RangeError("decomposition: empty segment block");
  const auto& w = weights_.at(head);
  std::vector<double> out(qr.size() * kr.size());
  for (std::size_t i = 0; i < qr.size(); ++i)
    for (std::size_t j = 0; j < kr.size(); ++j) out[i * kr.size() + j] = w[(qr.begin + i) * t + kr.begin + j];
  return Tensor::from({qr.size(), kr.size()}, std::move(out));
}

Tensor AttentionDecomposition::block(StreamId query, StreamId key) const {
  Tensor acc = head_block(0, query, key);
  auto a = acc.mutable_data();
  for (std::size_t h = 1; h < heads_; ++h) {
    const Tensor b = head_block(h, query, key);
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  }
  for (auto& v : a) v /= static_cast<double>(heads_);
  return acc;
}

void AttentionDecomposition::zero_block(StreamId query, StreamId key) {
  const auto t = layout_.total();
  const auto qr = layout_.range(query), kr = layout_.range(key);
  for (auto& w : weights_)
    for (std::size_t i = qr.begin; i < qr.end; ++i)
      for (std::size_t j = kr.begin; j < kr.end; ++j) w[i * t + j] = 0.0;
}

namespace {

void check_values(const AttentionDecomposition& decomp, const Tensor& values) {
  if (values.ndim() != 2 || values.rows() != decomp.layout().total() || values.cols() != decomp.dim()) {
    throw ContractError("decomposition does not match values of shape " + shape_str(values.shape()));
  }
}

// Accumulates W^{q}_{k} V^{k} of every head into `out` (rows of the query segment).
void accumulate_term(const AttentionDecomposition& decomp, std::span<const double> v, StreamId query, StreamId key,
                     double* out, std::size_t out_row0) {
  const auto& layout = decomp.layout();
  const auto t = layout.total(), d = decomp.dim(), dk = d / decomp.heads();
  const auto qr = layout.range(query), kr = layout.range(key);
  for (std::size_t h = 0; h < decomp.heads(); ++h) {
    const Tensor a = decomp.head_matrix(h);
    auto w = a.data();
    for (std::size_t i = qr.begin; i < qr.end; ++i)
      for (std::size_t j = kr.begin; j < kr.end; ++j) {
        const double wij = w[i * t + j];
        const double* vrow = v.data() + j * d + h * dk;
        double* orow = out + (i - qr.begin + out_row0) * d + h * dk;
        for (std::size_t c = 0; c < dk; ++c) orow[c] += wij * vrow[c];
      }
  }
}

}  // namespace

Tensor reconstruct_from_blocks(const AttentionDecomposition& decomp, const Tensor& values) {
  check_values(decomp, values);
  const auto& layout = decomp.layout();
  std::vector<double> out(values.size(), 0.0);
  for (auto q : kSegments) {
    if (layout.count(q) == 0) continue;
    for (auto k : kSegments) {
      if (layout.count(k) == 0) continue;
      accumulate_term(decomp, values.data(), q, k, out.data(), layout.offset(q));
    }
  }
  return Tensor::from(values.shape(), std::move(out));
}

Tensor segment_term(const AttentionDecomposition& decomp, const Tensor& values, StreamId query, StreamId key) {
  check_values(decomp, values);
  const auto& layout = decomp.layout();
  if (layout.count(query) == 0 || layout.count(key) == 0) throw RangeError("segment_term: empty segment");
  std::vector<double> out(layout.count(query) * decomp.dim(), 0.0);
  accumulate_term(decomp, values.data(), query, key, out.data(), 0);
  return Tensor::from({layout.count(query), decomp.dim()}, std::move(out));
}

// --- Attention and encoder --------------------------------------------------

JointAttentionResult joint_attention(const JointTokenState& state, const EncoderLayerParams& params) {
  const auto t = state.layout.total();
  if (state.batch != 1 || state.h.ndim() != 2 || state.h.rows() != t) {
    throw ShapeError("joint_attention: expects one sample of " + std::to_string(t) + " rows, got " +
                     shape_str(state.h.shape()));
  }
  const auto d = params.dim(), heads = params.heads, dk = d / heads;
  Tensor q = add_row(matmul(state.h, params.wq), params.bq);
  Tensor k = add_row(matmul(state.h, params.wk), params.bk);
  Tensor v = add_row(matmul(state.h, params.wv), params.bv);
  Tensor m = attention_core(q, k, v, 1, heads);

  // The weights are recomputed here, head by head, for inspection.
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));
  auto qd = q.data(), kd = k.data();
  std::vector<std::vector<double>> weights(heads, std::vector<double>(t * t));
  for (std::size_t h = 0; h < heads; ++h) {
    auto& w = weights[h];
    for (std::size_t i = 0; i < t; ++i) {
      double mx = -INFINITY;
      for (std::size_t j = 0; j < t; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < dk; ++c) s += qd[i * d + h * dk + c] * kd[j * d + h * dk + c];
        w[i * t + j] = s * inv_sqrt;
        mx = std::max(mx, w[i * t + j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < t; ++j) {
        w[i * t + j] = std::exp(w[i * t + j] - mx);
        z += w[i * t + j];
      }
      for (std::size_t j = 0; j < t; ++j) w[i * t + j] /= z;
    }
  }
  return {m, v, AttentionDecomposition(state.layout, heads, d, std::move(weights))};
}

JointTokenState encoder_layer(const JointTokenState& state, const EncoderLayerParams& p) {
  if (state.h.rows() != state.batch * state.layout.total()) {
    throw ShapeError("encoder_layer: state rows do not match the layout");
  }
  Tensor x = layer_norm(state.h, p.ln1_gain, p.ln1_bias);
  Tensor q = add_row(matmul(x, p.wq), p.bq);
  Tensor k = add_row(matmul(x, p.wk), p.bk);
  Tensor v = add_row(matmul(x, p.wv), p.bv);
  Tensor attn = attention_core(q, k, v, state.batch, p.heads);
  Tensor h = add(state.h, add_row(matmul(attn, p.wo), p.bo));
  Tensor y = layer_norm(h, p.ln2_gain, p.ln2_bias);
  Tensor mlp = add_row(matmul(gelu(add_row(matmul(y, p.w1), p.b1)), p.w2), p.b2);
  return {add(h, mlp), state.layout, state.batch};
}

Backbone Backbone::random(const BackboneConfig& config, Rng& rng) {
  if (config.depth == 0) throw ContractError("backbone depth must be at least 1");
  Backbone b;
  for (std::size_t i = 0; i < config.depth; ++i) b.layers.push_back(EncoderLayerParams::random(config.dim, config.heads, rng));
  b.final_gain = Tensor::full({config.dim}, 1.0, true);
  b.final_bias = Tensor::zeros({config.dim}, true);
  return b;
}

void Backbone::register_parameters(ParameterSet& params, const std::string& prefix) const {
  for (std::size_t i = 0; i < layers.size(); ++i) layers[i].register_parameters(params, prefix + "layer" + std::to_string(i) + ".");
  params.add(prefix + "final_gain", final_gain, ParamGroup::backbone);
  params.add(prefix + "final_bias", final_bias, ParamGroup::backbone);
}

std::vector<std::size_t> segment_rows(const SegmentLayout& layout, std::size_t batch, StreamId segment) {
  std::vector<std::size_t> idx;
  idx.reserve(batch * layout.count(segment));
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < layout.count(segment); ++i) idx.push_back(b * layout.total() + layout.offset(segment) + i);
  return idx;
}

JointTokenState concat_streams(const StreamSet& streams) {
  const auto batch = streams[0].batch;
  std::array<std::size_t, 4> counts{};
  for (std::size_t s = 0; s < 4; ++s) {
    if (streams[s].id != kSegments[s]) throw ContractError("streams must be ordered x_rgb, x_t, z_rgb, z_t");
    if (streams[s].batch != batch) throw ShapeError("streams disagree on batch size");
    counts[s] = streams[s].tokens_per_sample();
  }
  SegmentLayout layout(counts);
  // Rows of concat_rows(...) are stream-major; regroup them sample-major.
  std::array<std::size_t, 4> block_offset{};
  std::size_t off = 0;
  for (std::size_t s = 0; s < 4; ++s) {
    block_offset[s] = off;
    off += batch * counts[s];
  }
  std::vector<std::size_t> idx;
  idx.reserve(off);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t s = 0; s < 4; ++s)
      for (std::size_t i = 0; i < counts[s]; ++i) idx.push_back(block_offset[s] + b * counts[s] + i);
  Tensor stacked = concat_rows({streams[0].tokens, streams[1].tokens, streams[2].tokens, streams[3].tokens});
  return {gather_rows(stacked, std::move(idx)), layout, batch};
}

SearchFeatures backbone_forward(const StreamSet& streams, const Backbone& backbone) {
  if (backbone.layers.empty()) throw ContractError("backbone depth must be at least 1");
  JointTokenState state = concat_streams(streams);
  for (const auto& layer : backbone.layers) state = encoder_layer(state, layer);
  Tensor h = layer_norm(state.h, backbone.final_gain, backbone.final_bias);
  return {gather_rows(h, segment_rows(state.layout, state.batch, StreamId::x_rgb)),
          gather_rows(h, segment_rows(state.layout, state.batch, StreamId::x_t)), state.batch};
}

}  // namespace fusetrack
