#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hfta/tensor.h"

namespace hfta {

// How B models' activations share one tensor.
//   kChannelFolded: [N, B*C, ...]  model b owns channel block b
//   kModelLeading:  [B, N, ...]
//   kModelMid:      [N, B, ...]
enum class FusedLayout { kChannelFolded, kModelLeading, kModelMid };

std::string_view layout_name(FusedLayout layout);
FusedLayout parse_layout(std::string_view name);

// Shape of one model's slice, and the inverse.
Shape serial_shape(const Shape& fused, FusedLayout layout, std::int64_t models);
Shape fused_shape(const Shape& serial, FusedLayout layout, std::int64_t models);

// Flat offsets into the fused tensor of model `model`'s elements, listed in
// the serial tensor's row-major order.
std::vector<std::size_t> model_slice_index(const Shape& serial, FusedLayout layout,
                                           std::int64_t models, std::int64_t model);

// Bijective re-layout of a fused activation; differentiable.
Tensor layout_adapt(const Tensor& x, FusedLayout from, FusedLayout to, std::int64_t models);

Tensor extract_model(const Tensor& fused, FusedLayout layout, std::int64_t models,
                     std::int64_t model);
std::vector<Tensor> split_models(const Tensor& fused, FusedLayout layout, std::int64_t models);

// Inverse of split_models: B same-shape serial tensors -> one fused tensor.
Tensor stack_models(std::span<const Tensor> per_model, FusedLayout layout);

// The same serial tensor fed to all B models (shared-batch semantics).
Tensor replicate(const Tensor& serial, std::int64_t models, FusedLayout layout);

}  // namespace hfta
