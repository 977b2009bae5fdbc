#include "hfta/dropout.h"

#include "hfta/autograd.h"
#include "hfta/errors.h"
#include "hfta/kernel_counter.h"

namespace hfta {
namespace {

void check_p(double p) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw ConfigError("dropout probability must lie in [0, 1), got " + std::to_string(p));
  }
}

// Mask over the units that are dropped together: every element for
// kPlain, every (n, c) pair for kChannel2d.
Shape unit_shape(DropoutKind kind, const Shape& serial) {
  if (kind == DropoutKind::kPlain) return serial;
  if (serial.size() < 3) {
    throw DimensionError("channel dropout expects [N, C, ...], got " + to_string(serial));
  }
  return {serial[0], serial[1]};
}

std::vector<double> draw_units(std::int64_t count, double p, Rng& rng) {
  std::vector<double> units(static_cast<std::size_t>(count));
  const double keep_scale = 1.0 / (1.0 - p);
  for (double& u : units) u = rng.uniform() >= p ? keep_scale : 0.0;
  return units;
}

Tensor apply_mask(const Tensor& x, std::vector<double> mask) {
  KernelCounter::record("dropout");
  auto xd = x.data();
  std::vector<double> y(xd.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = xd[i] * mask[i];
  return make_result("dropout", x.shape(), std::move(y), {x},
                     [mask = std::move(mask)](const BackwardContext& ctx) {
                       auto g = ctx.grad_output();
                       auto gx = ctx.grad_input(0);
                       for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
                     });
}

// Expands a per-channel mask over [N, C, plane].
std::vector<double> expand_channels(const std::vector<double>& units, std::int64_t plane) {
  std::vector<double> mask(units.size() * static_cast<std::size_t>(plane));
  for (std::size_t u = 0; u < units.size(); ++u)
    for (std::int64_t k = 0; k < plane; ++k) mask[u * plane + k] = units[u];
  return mask;
}

}  // namespace

Tensor dropout(DropoutKind kind, const Tensor& x, double p, bool training, Rng rng) {
  check_p(p);
  const Shape units = unit_shape(kind, x.shape());
  if (!training || p == 0.0) return x;
  std::vector<double> drawn = draw_units(numel(units), p, rng);
  if (kind == DropoutKind::kPlain) return apply_mask(x, std::move(drawn));
  return apply_mask(x, expand_channels(drawn, x.numel() / numel(units)));
}

Tensor fused_dropout(DropoutKind kind, const Tensor& x, double p, bool training,
                     std::span<const Rng> per_model, FusedLayout layout) {
  check_p(p);
  const auto models = static_cast<std::int64_t>(per_model.size());
  if (models < 1) throw ContractError("fused dropout needs one generator per model");
  if (kind == DropoutKind::kChannel2d && layout != FusedLayout::kChannelFolded) {
    throw ContractError("channel dropout operates on channel-folded activations");
  }
  const Shape serial = serial_shape(x.shape(), layout, models);
  const Shape units = unit_shape(kind, serial);
  if (!training || p == 0.0) return x;

  // Units of model b sit where a [N, C] (or full serial) tensor of model b
  // would sit in the same layout.
  std::vector<double> fused_units(static_cast<std::size_t>(numel(units) * models));
  for (std::int64_t b = 0; b < models; ++b) {
    Rng rng = per_model[b];
    std::vector<double> drawn = draw_units(numel(units), p, rng);
    auto slots = model_slice_index(units, layout, models, b);
    for (std::size_t i = 0; i < drawn.size(); ++i) fused_units[slots[i]] = drawn[i];
  }
  if (kind == DropoutKind::kPlain) return apply_mask(x, std::move(fused_units));
  return apply_mask(x, expand_channels(fused_units, x.numel() / (numel(units) * models)));
}

}  // namespace hfta
