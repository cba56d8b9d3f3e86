// SPDX-License-Identifier: Apache-2.0
//
// Single-backbone joint attention over the concatenated token matrix
// H = [x_rgb; x_t; z_rgb; z_t]. One softmax over all rows of H performs
// per-modality extraction, cross-modal fusion and template/search relation
// modeling at once; AttentionDecomposition exposes the sixteen blocks of the
// attention matrix so each of those terms can be inspected separately.

#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "fusetrack/embedding.hpp"
#include "fusetrack/optim.hpp"
#include "fusetrack/tensor.hpp"

namespace fusetrack {

class SegmentLayout {
 public:
  SegmentLayout() = default;
  // Rows per segment in x_rgb, x_t, z_rgb, z_t order.
  explicit SegmentLayout(std::array<std::size_t, 4> counts);
  static SegmentLayout from_tokens(std::size_t search_tokens, std::size_t template_tokens) {
    return SegmentLayout({search_tokens, search_tokens, template_tokens, template_tokens});
  }

  std::size_t count(StreamId s) const { return counts_[static_cast<int>(s)]; }
  std::size_t offset(StreamId s) const { return offsets_[static_cast<int>(s)]; }
  RowRange range(StreamId s) const { return {offset(s), offset(s) + count(s)}; }
  std::size_t total() const { return total_; }
  bool operator==(const SegmentLayout&) const = default;

 private:
  std::array<std::size_t, 4> counts_{};
  std::array<std::size_t, 4> offsets_{};
  std::size_t total_ = 0;
};

inline constexpr std::array<StreamId, 4> kSegments{StreamId::x_rgb, StreamId::x_t, StreamId::z_rgb, StreamId::z_t};

struct EncoderLayerParams {
  Tensor wq, bq, wk, bk, wv, bv;  // [D, D], [D]
  Tensor wo, bo;                  // [D, D], [D]
  Tensor w1, b1, w2, b2;          // [D, 4D], [4D], [4D, D], [D]
  Tensor ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  std::size_t heads = 1;

  std::size_t dim() const { return wq.rows(); }
  static EncoderLayerParams random(std::size_t dim, std::size_t heads, Rng& rng);
  void register_parameters(ParameterSet& params, const std::string& prefix) const;
};

struct JointTokenState {
  Tensor h;  // [batch * layout.total(), D], samples stacked
  SegmentLayout layout;
  std::size_t batch = 1;
};

// Row-softmaxed attention weights of one single-sample forward, kept per head.
class AttentionDecomposition {
 public:
  AttentionDecomposition(SegmentLayout layout, std::size_t heads, std::size_t dim,
                         std::vector<std::vector<double>> head_weights);

  const SegmentLayout& layout() const { return layout_; }
  std::size_t heads() const { return heads_; }
  std::size_t dim() const { return dim_; }
  // Full [T, T] attention matrix of one head.
  Tensor head_matrix(std::size_t head) const;
  // Block W^{query}_{key} of one head.
  Tensor head_block(std::size_t head, StreamId query, StreamId key) const;
  // Block averaged over heads.
  Tensor block(StreamId query, StreamId key) const;
  // Zeroes block (query, key) in every head.
  void zero_block(StreamId query, StreamId key);

 private:
  SegmentLayout layout_;
  std::size_t heads_;
  std::size_t dim_;
  std::vector<std::vector<double>> weights_;  // per head, T*T row-major
};

struct JointAttentionResult {
  Tensor output;  // M = A V, before the output projection, [T, D]
  Tensor values;  // V, [T, D]
  AttentionDecomposition decomposition;
};

// Attention sublayer of one sample applied directly to state.h (no layer norm).
JointAttentionResult joint_attention(const JointTokenState& state, const EncoderLayerParams& params);

// Sum over key segments k of W^{q}_{k} V^{k}, per head, for every query segment.
Tensor reconstruct_from_blocks(const AttentionDecomposition& decomp, const Tensor& values);

// One term W^{query}_{key} V^{key} across all heads, [count(query), D].
Tensor segment_term(const AttentionDecomposition& decomp, const Tensor& values, StreamId query, StreamId key);

// Pre-norm residual block: H += W_O Attn(LN(H)); H += MLP(LN(H)).
JointTokenState encoder_layer(const JointTokenState& state, const EncoderLayerParams& params);

struct BackboneConfig {
  std::size_t dim = 64;
  std::size_t depth = 4;
  std::size_t heads = 4;
};

struct Backbone {
  std::vector<EncoderLayerParams> layers;
  Tensor final_gain, final_bias;

  static Backbone random(const BackboneConfig& config, Rng& rng);
  void register_parameters(ParameterSet& params, const std::string& prefix) const;
};

struct SearchFeatures {
  Tensor rgb;  // [batch * N_x, D]
  Tensor thermal;
  std::size_t batch = 1;
};

// Concatenates streams per sample, stacks a set of rows per sample in layout order.
JointTokenState concat_streams(const StreamSet& streams);
SearchFeatures backbone_forward(const StreamSet& streams, const Backbone& backbone);

// Row indices that pull `segment` out of a stacked state for every sample.
std::vector<std::size_t> segment_rows(const SegmentLayout& layout, std::size_t batch, StreamId segment);

}  // namespace fusetrack
