#pragma once

#include <span>

#include "hfta/fused_parameter.h"
#include "hfta/tensor.h"

namespace hfta {

// Serial Linear: x[..., Fx] . w[Fx, Fy] + b[Fy].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

struct FusedLinear {
  FusedParameter weight;  // [B, Fx, Fy]
  FusedParameter bias;    // [B, 1, Fy]
};

// B Linear layers -> one baddbmm. Shapes must agree across models.
FusedLinear fuse_linear(std::span<const Tensor> weights, std::span<const Tensor> biases);

// x: model-leading [B, ..., Fx].
Tensor fused_linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

}  // namespace hfta
