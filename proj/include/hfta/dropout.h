#pragma once

#include <span>

#include "hfta/layout.h"
#include "hfta/rng.h"
#include "hfta/tensor.h"

namespace hfta {

enum class DropoutKind { kPlain, kChannel2d };

// Training mode zeroes elements (kPlain) or whole [n, c] channels
// (kChannel2d) with probability p and scales survivors by 1/(1-p); eval
// mode and p == 0 are the identity. The mask is drawn from `rng` in the
// serial tensor's element order.
Tensor dropout(DropoutKind kind, const Tensor& x, double p, bool training, Rng rng);

// Fused counterpart: model b's mask is drawn from per_model[b] exactly as
// the serial call would draw it, then scattered into the fused layout.
Tensor fused_dropout(DropoutKind kind, const Tensor& x, double p, bool training,
                     std::span<const Rng> per_model, FusedLayout layout);

}  // namespace hfta
