#include "hfta/linear.h"

#include "hfta/errors.h"
#include "hfta/tensor_ops.h"

namespace hfta {

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.dim() == 2) return addmm(bias, x, weight);
  if (x.dim() < 2) throw DimensionError("linear expects rank >= 2 input, got " + to_string(x.shape()));
  const std::int64_t fx = x.shape().back();
  Tensor y = addmm(bias, reshape(x, {x.numel() / fx, fx}), weight);
  Shape out = x.shape();
  out.back() = weight.size(1);
  return reshape(y, out);
}

FusedLinear fuse_linear(std::span<const Tensor> weights, std::span<const Tensor> biases) {
  if (weights.empty()) throw FusionError("cannot fuse zero Linear layers");
  if (biases.size() != weights.size()) throw FusionError("one bias per fused Linear is required");
  const Shape& ws = weights[0].shape();
  if (ws.size() != 2) throw DimensionError("Linear weight must be [Fx, Fy], got " + to_string(ws));
  for (std::size_t b = 0; b < weights.size(); ++b) {
    if (weights[b].shape() != ws) {
      throw InfusibleError("weight", "Linear weight " + to_string(weights[b].shape()) +
                                         " of model " + std::to_string(b) + " differs from " +
                                         to_string(ws));
    }
    if (biases[b].numel() != ws[1]) {
      throw InfusibleError("bias", "Linear bias of model " + std::to_string(b) +
                                       " does not match " + std::to_string(ws[1]) + " outputs");
    }
  }
  std::vector<Tensor> rows;
  for (const Tensor& b : biases) {
    rows.emplace_back(Shape{1, ws[1]}, std::vector<double>(b.data().begin(), b.data().end()));
  }
  return {FusedParameter::stack(weights), FusedParameter::stack(rows)};
}

Tensor fused_linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.dim() == 3) return baddbmm(bias, x, weight);
  if (x.dim() < 3) {
    throw DimensionError("fused linear expects [B, N, Fx], got " + to_string(x.shape()));
  }
  const std::int64_t models = x.size(0);
  const std::int64_t fx = x.shape().back();
  Tensor y = baddbmm(bias, reshape(x, {models, x.numel() / (models * fx), fx}), weight);
  Shape out = x.shape();
  out.back() = weight.size(2);
  return reshape(y, out);
}

}  // namespace hfta
