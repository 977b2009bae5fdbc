#pragma once

#include <cstdint>
#include <vector>

#include "hfta/tensor.h"

namespace hfta {

enum class PoolKind { kMax2d, kAdaptiveAvg2d };

struct PoolConfig {
  PoolKind kind = PoolKind::kMax2d;
  std::vector<std::int64_t> kernel{2, 2};   // max
  std::vector<std::int64_t> stride{2, 2};   // max
  std::vector<std::int64_t> padding{0, 0};  // max
  std::vector<std::int64_t> output_size{1, 1};  // adaptive

  Shape output_shape(const Shape& input) const;
  bool operator==(const PoolConfig&) const = default;
};

// Per-channel 2-D pooling of [N, C, H, W]. Channels are independent, so a
// channel-folded [N, B*C, H, W] input pools all B models in one call.
Tensor pool2d(const Tensor& x, const PoolConfig& cfg);

}  // namespace hfta
