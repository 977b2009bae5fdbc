#pragma once

#include <cstdint>
#include <span>

#include "hfta/tensor.h"

namespace hfta {

// A trainable tensor holding B models' parameters concatenated along
// `fusion_axis`, each model owning `per_model_extent` consecutive entries.
// `first_model` is the job-level index of slice 0 (non-zero only for the
// replicated copies of an unfused block inside a partially fused job).
struct FusedParameter {
  Tensor value;
  std::int64_t model_count = 1;
  std::int64_t fusion_axis = 0;
  std::int64_t per_model_extent = 1;
  std::int64_t first_model = 0;

  // A single model's parameter (B = 1).
  static FusedParameter serial(Tensor value, std::int64_t model_index = 0);
  // Concatenates B same-shape serial parameters along `axis`.
  static FusedParameter concat(std::span<const Tensor> per_model, std::int64_t axis = 0);
  // B serial parameters stacked under a new leading model axis.
  static FusedParameter stack(std::span<const Tensor> per_model);

  // Copy of slice b, reshaped to `serial_shape` when given.
  Tensor model_slice(std::int64_t b, const Shape& serial_shape = {}) const;

  void validate() const;
};

}  // namespace hfta
