#pragma once

#include <cstdint>
#include <span>

#include "hfta/fused_parameter.h"
#include "hfta/tensor.h"

namespace hfta {

struct EmbeddingConfig {
  std::int64_t num_embeddings = 1;  // rows per model
  std::int64_t embedding_dim = 1;
  bool operator==(const EmbeddingConfig&) const = default;
};

// indices: integer-valued tensor [D...]; table: [rows, dim]. Output
// [D..., dim]. Differentiable in the table only.
Tensor embedding(const Tensor& indices, const Tensor& table);

struct FusedEmbedding {
  EmbeddingConfig config;  // per-model extents
  FusedParameter table;    // [B * num_embeddings, dim]
};

FusedEmbedding fuse_embedding(std::span<const EmbeddingConfig> configs,
                              std::span<const Tensor> tables);

// Model b's indices (row b of a model-leading [B, D...] tensor) shifted by
// b * rows_per_model. Rejects any serial index outside [0, rows_per_model).
Tensor offset_indices(const Tensor& indices, std::int64_t rows_per_model);

// Lookup of model-leading indices in a row-concatenated table.
Tensor fused_embedding(const Tensor& indices, const Tensor& table, std::int64_t rows_per_model);

}  // namespace hfta
