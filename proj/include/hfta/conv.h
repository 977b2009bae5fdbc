#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "hfta/fused_parameter.h"
#include "hfta/tensor.h"

namespace hfta {

// (De)convolution over 1 or 2 spatial dims. Weights are laid out
// [out_channels, in_channels / groups, k...] for both directions, so
// fusing always concatenates along axis 0.
struct ConvConfig {
  std::int64_t in_channels = 1;
  std::int64_t out_channels = 1;
  std::vector<std::int64_t> kernel{1, 1};
  std::vector<std::int64_t> stride{1, 1};
  std::vector<std::int64_t> padding{0, 0};
  std::int64_t groups = 1;
  bool transposed = false;

  std::size_t spatial_dims() const { return kernel.size(); }
  void validate() const;
  Shape weight_shape() const;
  Shape bias_shape() const { return {out_channels}; }
  // Throws ShapeError when an output extent would be non-positive.
  Shape output_shape(const Shape& input) const;

  bool operator==(const ConvConfig&) const = default;
};

// Direct grouped (de)convolution: group i reads input channel block i and
// writes output channel block i. `bias` may be undefined.
Tensor grouped_conv_forward(const Tensor& x, const Tensor& weight, const Tensor& bias,
                            const ConvConfig& cfg);

struct FusedConv {
  ConvConfig config;
  FusedParameter weight;
  FusedParameter bias;
};

// B identical convs -> one grouped conv with groups = B*g over
// channel-folded input. Throws InfusibleError naming the first field that
// differs between models.
ConvConfig fuse_conv_config(std::span<const ConvConfig> configs);
FusedConv fuse_conv_family(std::span<const ConvConfig> configs, std::span<const Tensor> weights,
                           std::span<const Tensor> biases);

}  // namespace hfta
