#include "hfta/embedding.h"

#include <cmath>

#include "hfta/autograd.h"
#include "hfta/errors.h"
#include "hfta/kernel_counter.h"

namespace hfta {
namespace {

std::int64_t as_index(double v, std::int64_t limit) {
  if (!(v >= 0.0) || v != std::floor(v) || v >= static_cast<double>(limit)) {
    throw RangeError("embedding index " + std::to_string(v) + " outside [0, " +
                     std::to_string(limit) + ")");
  }
  return static_cast<std::int64_t>(v);
}

}  // namespace

Tensor embedding(const Tensor& indices, const Tensor& table) {
  if (table.dim() != 2) throw DimensionError("embedding table must be [rows, dim]");
  const std::int64_t rows = table.size(0), dim = table.size(1);
  auto id = indices.data();
  std::vector<std::int64_t> rows_used(id.size());
  for (std::size_t i = 0; i < id.size(); ++i) rows_used[i] = as_index(id[i], rows);
  KernelCounter::record("embedding");

  auto td = table.data();
  std::vector<double> out(id.size() * static_cast<std::size_t>(dim));
  for (std::size_t i = 0; i < rows_used.size(); ++i)
    for (std::int64_t j = 0; j < dim; ++j) out[i * dim + j] = td[rows_used[i] * dim + j];

  Shape out_shape = indices.shape();
  out_shape.push_back(dim);
  return make_result("embedding", out_shape, std::move(out), {indices, table},
                     [rows_used = std::move(rows_used), dim](const BackwardContext& ctx) {
                       if (!ctx.needs(1)) return;
                       auto g = ctx.grad_output();
                       auto gt = ctx.grad_input(1);
                       for (std::size_t i = 0; i < rows_used.size(); ++i)
                         for (std::int64_t j = 0; j < dim; ++j)
                           gt[rows_used[i] * dim + j] += g[i * dim + j];
                     });
}

FusedEmbedding fuse_embedding(std::span<const EmbeddingConfig> configs,
                              std::span<const Tensor> tables) {
  if (configs.empty()) throw FusionError("cannot fuse zero embeddings");
  if (tables.size() != configs.size()) throw FusionError("one table per fused embedding is required");
  for (std::size_t b = 1; b < configs.size(); ++b) {
    if (configs[b].num_embeddings != configs[0].num_embeddings) {
      throw InfusibleError("num_embeddings", "embedding rows differ for model " + std::to_string(b));
    }
    if (configs[b].embedding_dim != configs[0].embedding_dim) {
      throw InfusibleError("embedding_dim", "embedding dim differs for model " + std::to_string(b));
    }
  }
  return {configs[0], FusedParameter::concat(tables, 0)};
}

Tensor offset_indices(const Tensor& indices, std::int64_t rows_per_model) {
  if (indices.dim() < 1) throw DimensionError("fused embedding indices need a model axis");
  const std::int64_t models = indices.size(0);
  const std::int64_t per_model = indices.numel() / models;
  auto id = indices.data();
  std::vector<double> out(id.size());
  for (std::int64_t b = 0; b < models; ++b)
    for (std::int64_t i = 0; i < per_model; ++i) {
      const std::int64_t k = b * per_model + i;
      out[k] = static_cast<double>(as_index(id[k], rows_per_model) + b * rows_per_model);
    }
  return Tensor(indices.shape(), std::move(out));
}

Tensor fused_embedding(const Tensor& indices, const Tensor& table, std::int64_t rows_per_model) {
  return embedding(offset_indices(indices, rows_per_model), table);
}

}  // namespace hfta
