#include "hfta/layout.h"

#include "hfta/autograd.h"
#include "hfta/errors.h"
#include "hfta/kernel_counter.h"
#include "hfta/tensor_ops.h"

namespace hfta {
namespace {

void require_models(std::int64_t models) {
  if (models < 1) throw ShapeError("model count must be positive");
}

}  // namespace

std::string_view layout_name(FusedLayout layout) {
  switch (layout) {
    case FusedLayout::kChannelFolded: return "channel_folded";
    case FusedLayout::kModelLeading: return "model_leading";
    case FusedLayout::kModelMid: return "model_mid";
  }
  return "?";
}

FusedLayout parse_layout(std::string_view name) {
  if (name == "channel_folded") return FusedLayout::kChannelFolded;
  if (name == "model_leading") return FusedLayout::kModelLeading;
  if (name == "model_mid") return FusedLayout::kModelMid;
  throw SchemaError("unknown fused layout '" + std::string(name) + "'");
}

Shape serial_shape(const Shape& fused, FusedLayout layout, std::int64_t models) {
  require_models(models);
  switch (layout) {
    case FusedLayout::kChannelFolded: {
      if (fused.size() < 2 || fused[1] % models != 0) {
        throw ShapeError("channel-folded shape " + to_string(fused) +
                         " has no channel axis divisible by " + std::to_string(models));
      }
      Shape s = fused;
      s[1] /= models;
      return s;
    }
    case FusedLayout::kModelLeading: {
      if (fused.size() < 2 || fused[0] != models) {
        throw ShapeError("model-leading shape " + to_string(fused) + " does not lead with " +
                         std::to_string(models));
      }
      return Shape(fused.begin() + 1, fused.end());
    }
    case FusedLayout::kModelMid: {
      if (fused.size() < 3 || fused[1] != models) {
        throw ShapeError("model-mid shape " + to_string(fused) + " lacks model axis " +
                         std::to_string(models));
      }
      Shape s = fused;
      s.erase(s.begin() + 1);
      return s;
    }
  }
  return fused;
}

Shape fused_shape(const Shape& serial, FusedLayout layout, std::int64_t models) {
  require_models(models);
  Shape s = serial;
  switch (layout) {
    case FusedLayout::kChannelFolded:
      if (s.size() < 2) throw ShapeError("channel-folded layout needs rank >= 2");
      s[1] *= models;
      break;
    case FusedLayout::kModelLeading:
      s.insert(s.begin(), models);
      break;
    case FusedLayout::kModelMid:
      if (s.size() < 2) throw ShapeError("model-mid layout needs rank >= 2");
      s.insert(s.begin() + 1, models);
      break;
  }
  return s;
}

std::vector<std::size_t> model_slice_index(const Shape& serial, FusedLayout layout,
                                           std::int64_t models, std::int64_t model) {
  require_models(models);
  if (model < 0 || model >= models) throw RangeError("model index out of range");
  const std::int64_t count = numel(serial);
  std::vector<std::size_t> index(static_cast<std::size_t>(count));
  switch (layout) {
    case FusedLayout::kModelLeading:
      for (std::int64_t i = 0; i < count; ++i)
        index[i] = static_cast<std::size_t>(model * count + i);
      break;
    case FusedLayout::kChannelFolded:
    case FusedLayout::kModelMid: {
      // Serial [N, inner...] where model b's block sits between the batch
      // axis and the rest; the block is C*rest (folded) or rest (mid) wide.
      const std::int64_t n = serial[0];
      const std::int64_t block = count / n;
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < block; ++j)
          index[i * block + j] = static_cast<std::size_t>((i * models + model) * block + j);
      break;
    }
  }
  return index;
}

Tensor layout_adapt(const Tensor& x, FusedLayout from, FusedLayout to, std::int64_t models) {
  const Shape serial = serial_shape(x.shape(), from, models);
  const Shape out_shape = fused_shape(serial, to, models);
  std::vector<std::size_t> index(static_cast<std::size_t>(x.numel()));
  for (std::int64_t b = 0; b < models; ++b) {
    auto src = model_slice_index(serial, from, models, b);
    auto dst = model_slice_index(serial, to, models, b);
    for (std::size_t i = 0; i < src.size(); ++i) index[dst[i]] = src[i];
  }
  KernelCounter::record("layout_adapt");
  return gather(x, out_shape, std::move(index));
}

Tensor extract_model(const Tensor& fused, FusedLayout layout, std::int64_t models,
                     std::int64_t model) {
  const Shape serial = serial_shape(fused.shape(), layout, models);
  return gather(fused, serial, model_slice_index(serial, layout, models, model));
}

std::vector<Tensor> split_models(const Tensor& fused, FusedLayout layout, std::int64_t models) {
  std::vector<Tensor> out;
  out.reserve(static_cast<std::size_t>(models));
  for (std::int64_t b = 0; b < models; ++b) out.push_back(extract_model(fused, layout, models, b));
  return out;
}

Tensor stack_models(std::span<const Tensor> per_model, FusedLayout layout) {
  if (per_model.empty()) throw ContractError("stack_models of an empty list");
  const Shape serial = per_model[0].shape();
  const auto models = static_cast<std::int64_t>(per_model.size());
  for (const Tensor& t : per_model) {
    if (t.shape() != serial) {
      throw DimensionError("stack_models: " + to_string(serial) + " vs " + to_string(t.shape()));
    }
  }
  const Shape out_shape = fused_shape(serial, layout, models);
  std::vector<std::vector<std::size_t>> slots;
  std::vector<double> out(static_cast<std::size_t>(numel(out_shape)));
  for (std::int64_t b = 0; b < models; ++b) {
    slots.push_back(model_slice_index(serial, layout, models, b));
    auto src = per_model[b].data();
    for (std::size_t i = 0; i < src.size(); ++i) out[slots.back()[i]] = src[i];
  }
  KernelCounter::record("stack_models");
  std::vector<Tensor> inputs(per_model.begin(), per_model.end());
  return make_result("stack_models", out_shape, std::move(out), std::move(inputs),
                     [slots = std::move(slots)](const BackwardContext& ctx) {
                       auto g = ctx.grad_output();
                       for (std::size_t b = 0; b < slots.size(); ++b) {
                         if (!ctx.needs(b)) continue;
                         auto gi = ctx.grad_input(b);
                         for (std::size_t i = 0; i < slots[b].size(); ++i) gi[i] += g[slots[b][i]];
                       }
                     });
}

Tensor replicate(const Tensor& serial, std::int64_t models, FusedLayout layout) {
  const Shape out_shape = fused_shape(serial.shape(), layout, models);
  std::vector<std::size_t> index(static_cast<std::size_t>(numel(out_shape)));
  for (std::int64_t b = 0; b < models; ++b) {
    auto dst = model_slice_index(serial.shape(), layout, models, b);
    for (std::size_t i = 0; i < dst.size(); ++i) index[dst[i]] = i;
  }
  KernelCounter::record("replicate");
  return gather(serial, out_shape, std::move(index));
}

}  // namespace hfta
