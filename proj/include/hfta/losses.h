#pragma once

#include <cstdint>
#include <span>

#include "hfta/tensor.h"

namespace hfta {

enum class LossKind { kMse, kCrossEntropy, kBce };
enum class Reduction { kMean, kSum, kNone };

// mse:           pred, target same shape
// cross_entropy: pred [N, K] logits, target [N] class indices
// bce:           pred probabilities in (0, 1), target same shape
// kNone returns per-element losses (per-sample for cross entropy).
Tensor serial_loss(LossKind kind, const Tensor& pred, const Tensor& target, Reduction reduction);

// Loss of every model in a model-leading prediction [B, ...]. `target` is
// either shared by all models (serial target shape) or per-model [B, ...].
// Returns [B] for kMean/kSum and [B, ...] for kNone.
Tensor per_model_losses(LossKind kind, const Tensor& preds, const Tensor& target,
                        Reduction reduction);

struct FusedLossValue {
  Tensor raw;     // mean (or sum) of the per-model losses
  Tensor scaled;  // what backward runs on: B * raw for kMean, raw otherwise
  std::int64_t model_count = 0;
  Reduction reduction = Reduction::kMean;
  Tensor per_model;  // the individual losses feeding `raw`
};

// Combines per-model losses ([B], or [B, ...] for kNone) into the fused
// loss. Regularisation terms added to the per-model losses beforehand
// are covered by the same scaling.
FusedLossValue fuse_losses(const Tensor& per_model, Reduction reduction);

FusedLossValue fused_loss(LossKind kind, const Tensor& preds, const Tensor& target,
                          Reduction reduction);
// Per-model prediction/target lists; B == 0 throws FusionError.
FusedLossValue fused_loss(LossKind kind, std::span<const Tensor> preds,
                          std::span<const Tensor> targets, Reduction reduction);

}  // namespace hfta
