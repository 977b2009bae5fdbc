#pragma once

#include <cstdint>
#include <span>

#include "hfta/fused_parameter.h"
#include "hfta/tensor.h"

namespace hfta {

struct BatchNormConfig {
  std::int64_t num_features = 1;
  double eps = 1e-5;
  double momentum = 0.1;
  bool operator==(const BatchNormConfig&) const = default;
};

// Affine parameters plus running statistics of one batch-norm layer.
struct BatchNormState {
  Tensor weight;
  Tensor bias;
  Tensor running_mean;
  Tensor running_var;

  static BatchNormState initial(std::int64_t channels);
};

// x: [N, C, ...]. Training mode normalises with batch statistics and
// updates the running buffers in place (unbiased variance, momentum rule
// r <- (1-m) r + m s); eval mode applies the running statistics.
Tensor batch_norm(const Tensor& x, const Tensor& weight, const Tensor& bias,
                  const Tensor& running_mean, const Tensor& running_var, bool training,
                  double momentum, double eps);

struct FusedBatchNorm {
  BatchNormConfig config;  // num_features = B * C
  FusedParameter weight;
  FusedParameter bias;
  FusedParameter running_mean;
  FusedParameter running_var;
};

FusedBatchNorm fuse_batchnorm(std::span<const BatchNormConfig> configs,
                              std::span<const BatchNormState> states);

struct LayerNormConfig {
  Shape normalized_shape;
  double eps = 1e-5;
  bool operator==(const LayerNormConfig&) const = default;
};

// Normalises over the trailing `normalized_numel` elements; no affine.
Tensor layer_norm(const Tensor& x, std::int64_t normalized_numel, double eps);

// x viewed as [models, M, E]; y = x * w[m] + b[m] with w, b holding
// models*E values each.
Tensor per_model_affine(const Tensor& x, const Tensor& weight, const Tensor& bias,
                        std::int64_t models);

// Serial LayerNorm with elementwise affine over normalized_shape.
Tensor layer_norm_affine(const Tensor& x, const Tensor& weight, const Tensor& bias,
                         const LayerNormConfig& cfg);

struct FusedLayerNorm {
  LayerNormConfig config;
  FusedParameter weight;  // [B, E...]; broadcast over the non-normalised dims
  FusedParameter bias;
};

FusedLayerNorm fuse_layernorm(std::span<const LayerNormConfig> configs,
                              std::span<const Tensor> weights, std::span<const Tensor> biases);

// x: model-leading [B, N, ..., E...].
Tensor fused_layer_norm(const Tensor& x, const Tensor& weight, const Tensor& bias,
                        const LayerNormConfig& cfg);

}  // namespace hfta
