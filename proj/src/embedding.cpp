// SPDX-License-Identifier: Apache-2.0

#include "fusetrack/embedding.hpp"

namespace fusetrack {

const char* stream_name(StreamId id) {
  switch (id) {
    case StreamId::x_rgb: return "x_rgb";
    case StreamId::x_t: return "x_t";
    case StreamId::z_rgb: return "z_rgb";
    case StreamId::z_t: return "z_t";
  }
  return "?";
}

namespace {

void check_image(const Tensor& image, std::size_t patch) {
  if (image.ndim() != 3 || image.dim(2) != 3) {
    throw ShapeError("image must be [H, W, 3], got " + shape_str(image.shape()));
  }
  if (patch == 0 || image.dim(0) % patch != 0 || image.dim(1) % patch != 0) {
    throw ShapeError("image " + shape_str(image.shape()) + " is not divisible into " + std::to_string(patch) +
                     "x" + std::to_string(patch) + " patches");
  }
}

void patchify_into(const Tensor& image, std::size_t patch, double* out) {
  const auto h = image.dim(0), w = image.dim(1);
  const auto gw = w / patch;
  const auto pd = 3 * patch * patch;
  auto px = image.data();
  for (std::size_t gy = 0; gy < h / patch; ++gy)
    for (std::size_t gx = 0; gx < gw; ++gx) {
      double* dst = out + (gy * gw + gx) * pd;
      for (std::size_t r = 0; r < patch; ++r) {
        const double* src = px.data() + ((gy * patch + r) * w + gx * patch) * 3;
        std::copy(src, src + 3 * patch, dst + r * 3 * patch);
      }
    }
}

Tensor patchify_batch(std::span<const ImagePair> pairs, bool thermal, std::size_t patch) {
  const Tensor& first = thermal ? pairs.front().thermal : pairs.front().rgb;
  check_image(first, patch);
  const auto n = first.dim(0) * first.dim(1) / (patch * patch);
  const auto pd = 3 * patch * patch;
  std::vector<double> out(pairs.size() * n * pd);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const Tensor& img = thermal ? pairs[i].thermal : pairs[i].rgb;
    check_image(img, patch);
    if (img.shape() != first.shape()) throw ShapeError("batched images must share a shape");
    patchify_into(img, patch, out.data() + i * n * pd);
  }
  return Tensor::from({pairs.size() * n, pd}, std::move(out));
}

TokenStream project(const Tensor& patches, const Tensor& proj, const Tensor& pos, const Tensor& modality,
                    StreamId id, std::size_t batch) {
  if (patches.rows() != batch * pos.rows()) {
    throw ShapeError(std::string("embedding: ") + stream_name(id) + " has " + std::to_string(patches.rows() / batch) +
                     " patches but the position table has " + std::to_string(pos.rows()) + " rows");
  }
  Tensor tokens = add_row(add_tiled(matmul(patches, proj), pos), modality);
  return {tokens, id, batch};
}

}  // namespace

Tensor patchify(const Tensor& image, std::size_t patch) {
  check_image(image, patch);
  const auto n = image.dim(0) * image.dim(1) / (patch * patch);
  std::vector<double> out(n * 3 * patch * patch);
  patchify_into(image, patch, out.data());
  return Tensor::from({n, 3 * patch * patch}, std::move(out));
}

Tensor unpatchify(const Tensor& patches, std::size_t height, std::size_t width, std::size_t patch) {
  if (patch == 0 || height % patch || width % patch || patches.rows() != height * width / (patch * patch) ||
      patches.cols() != 3 * patch * patch) {
    throw ShapeError("unpatchify: " + shape_str(patches.shape()) + " does not tile a " + std::to_string(height) + "x" +
                     std::to_string(width) + " image");
  }
  std::vector<double> out(height * width * 3);
  const auto gw = width / patch;
  auto src = patches.data();
  for (std::size_t gy = 0; gy < height / patch; ++gy)
    for (std::size_t gx = 0; gx < gw; ++gx)
      for (std::size_t r = 0; r < patch; ++r) {
        const double* s = src.data() + (gy * gw + gx) * 3 * patch * patch + r * 3 * patch;
        std::copy(s, s + 3 * patch, out.data() + ((gy * patch + r) * width + gx * patch) * 3);
      }
  return Tensor::from({height, width, 3}, std::move(out));
}

void EmbeddingTables::register_parameters(ParameterSet& params, const std::string& prefix) const {
  params.add(prefix + "proj_rgb", proj_rgb, ParamGroup::backbone);
  params.add(prefix + "proj_t", proj_t, ParamGroup::backbone);
  params.add(prefix + "pos_z", pos_z, ParamGroup::backbone);
  params.add(prefix + "pos_x", pos_x, ParamGroup::backbone);
  params.add(prefix + "modality_rgb", modality_rgb, ParamGroup::backbone);
  params.add(prefix + "modality_t", modality_t, ParamGroup::backbone);
}

EmbeddingTables make_embedding_tables(const EmbeddingConfig& config, Rng& rng) {
  if (config.patch == 0 || config.template_side % config.patch || config.search_side % config.patch) {
    throw ShapeError("embedding: patch size must divide the template and search sides");
  }
  constexpr double kStd = 0.02;
  EmbeddingTables t;
  t.config = config;
  t.proj_rgb = rng.truncated_normal_tensor({config.patch_dim(), config.dim}, kStd);
  t.proj_t = config.dual ? rng.truncated_normal_tensor({config.patch_dim(), config.dim}, kStd) : t.proj_rgb;
  t.pos_z = rng.truncated_normal_tensor({config.template_tokens(), config.dim}, kStd);
  t.pos_x = rng.truncated_normal_tensor({config.search_tokens(), config.dim}, kStd);
  t.modality_rgb = rng.truncated_normal_tensor({config.dim}, kStd);
  t.modality_t = rng.truncated_normal_tensor({config.dim}, kStd);
  return t;
}

StreamSet embed_batch(std::span<const ImagePair> templates, std::span<const ImagePair> searches,
                      const EmbeddingTables& tables) {
  if (templates.empty() || templates.size() != searches.size()) {
    throw ShapeError("embed_batch: template and search batches must be non-empty and equal in size");
  }
  const auto batch = templates.size();
  const auto p = tables.config.patch;
  const auto& e_rgb = tables.proj_rgb;
  const auto& e_t = tables.proj_t;
  if (e_rgb.rows() != 3 * p * p || e_t.shape() != e_rgb.shape()) {
    throw ShapeError("embed_batch: projection tables must be [3P^2, D]");
  }
  return {project(patchify_batch(searches, false, p), e_rgb, tables.pos_x, tables.modality_rgb, StreamId::x_rgb, batch),
          project(patchify_batch(searches, true, p), e_t, tables.pos_x, tables.modality_t, StreamId::x_t, batch),
          project(patchify_batch(templates, false, p), e_rgb, tables.pos_z, tables.modality_rgb, StreamId::z_rgb, batch),
          project(patchify_batch(templates, true, p), e_t, tables.pos_z, tables.modality_t, StreamId::z_t, batch)};
}

StreamSet embed_pair(const ImagePair& templates, const ImagePair& searches, const EmbeddingTables& tables) {
  return embed_batch(std::span<const ImagePair>(&templates, 1), std::span<const ImagePair>(&searches, 1), tables);
}

}  // namespace fusetrack
