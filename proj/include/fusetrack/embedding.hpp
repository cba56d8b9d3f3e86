// SPDX-License-Identifier: Apache-2.0
//
// Patch tokenization and the dual embedding layer: each modality has its own
// linear patch projection, position tables are shared per region (template or
// search) and a learned modality vector is added to every token of a modality.

#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>

#include "fusetrack/optim.hpp"
#include "fusetrack/tensor.hpp"

namespace fusetrack {

enum class StreamId { x_rgb = 0, x_t = 1, z_rgb = 2, z_t = 3 };

const char* stream_name(StreamId id);

// Aligned visible and thermal images, each a [H, W, 3] tensor with values in
// [0, 1]. Thermal imagery is replicated to three channels.
struct ImagePair {
  Tensor rgb;
  Tensor thermal;

  std::size_t height() const { return rgb.dim(0); }
  std::size_t width() const { return rgb.dim(1); }
};

// [H, W, 3] -> [H*W/P^2, 3*P^2]. Patches are in row-major grid order and each
// patch is flattened over (row, col, channel).
Tensor patchify(const Tensor& image, std::size_t patch);
Tensor unpatchify(const Tensor& patches, std::size_t height, std::size_t width, std::size_t patch);

struct EmbeddingConfig {
  std::size_t patch = 8;
  std::size_t dim = 64;
  std::size_t template_side = 32;
  std::size_t search_side = 64;
  bool dual = true;

  std::size_t template_tokens() const { return (template_side / patch) * (template_side / patch); }
  std::size_t search_tokens() const { return (search_side / patch) * (search_side / patch); }
  std::size_t patch_dim() const { return 3 * patch * patch; }
};

struct EmbeddingTables {
  Tensor proj_rgb;   // [3P^2, D]
  Tensor proj_t;     // [3P^2, D]; same storage as proj_rgb in single mode
  Tensor pos_z;      // [N_z, D]
  Tensor pos_x;      // [N_x, D]
  Tensor modality_rgb;  // [D]
  Tensor modality_t;    // [D]
  EmbeddingConfig config;

  bool dual() const { return !proj_rgb.same_storage(proj_t); }
  void register_parameters(ParameterSet& params, const std::string& prefix) const;
};

// Truncated-normal (std 0.02) initialization. With config.dual == false the
// thermal projection aliases the RGB one.
EmbeddingTables make_embedding_tables(const EmbeddingConfig& config, Rng& rng);

struct TokenStream {
  Tensor tokens;  // [batch * N, D]
  StreamId id = StreamId::x_rgb;
  std::size_t batch = 1;

  std::size_t tokens_per_sample() const { return tokens.rows() / batch; }
};

// Streams in layout order: x_rgb, x_t, z_rgb, z_t.
using StreamSet = std::array<TokenStream, 4>;

StreamSet embed_pair(const ImagePair& templates, const ImagePair& searches, const EmbeddingTables& tables);

// Batched form: sample i uses templates[i] and searches[i].
StreamSet embed_batch(std::span<const ImagePair> templates, std::span<const ImagePair> searches,
                      const EmbeddingTables& tables);

}  // namespace fusetrack
