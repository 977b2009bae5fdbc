#include "hfta/losses.h"

#include <algorithm>
#include <cmath>

#include "hfta/autograd.h"
#include "hfta/errors.h"
#include "hfta/kernel_counter.h"
#include "hfta/layout.h"
#include "hfta/tensor_ops.h"

namespace hfta {
namespace {

using Index = std::int64_t;

constexpr double kLogFloor = -100.0;

// Geometry of one model's loss: `terms` loss terms, each spanning `width`
// prediction entries (width > 1 only for cross entropy's class axis).
struct Slice {
  Index terms;
  Index width;
};

Slice slice_of(LossKind kind, const Shape& pred, const Shape& target) {
  if (kind == LossKind::kCrossEntropy) {
    if (pred.size() != 2 || target.size() != 1 || target[0] != pred[0]) {
      throw DimensionError("cross entropy expects logits [N, K] and targets [N], got " +
                           to_string(pred) + " and " + to_string(target));
    }
    return {pred[0], pred[1]};
  }
  if (pred != target) {
    throw DimensionError("loss prediction " + to_string(pred) + " and target " +
                         to_string(target) + " differ");
  }
  return {numel(pred), 1};
}

double term_value(LossKind kind, const double* p, const double* t, Index width) {
  switch (kind) {
    case LossKind::kMse: {
      const double d = p[0] - t[0];
      return d * d;
    }
    case LossKind::kBce: {
      const double lp = std::max(std::log(p[0]), kLogFloor);
      const double lq = std::max(std::log(1.0 - p[0]), kLogFloor);
      return -(t[0] * lp + (1.0 - t[0]) * lq);
    }
    case LossKind::kCrossEntropy: {
      const double cls = t[0];
      if (!(cls >= 0.0) || cls != std::floor(cls) || cls >= static_cast<double>(width)) {
        throw RangeError("class index " + std::to_string(cls) + " outside [0, " +
                         std::to_string(width) + ")");
      }
      const double top = *std::max_element(p, p + width);
      double acc = 0.0;
      for (Index k = 0; k < width; ++k) acc += std::exp(p[k] - top);
      return top + std::log(acc) - p[static_cast<Index>(cls)];
    }
  }
  return 0.0;
}

// d(term)/d(pred) * g accumulated into gp.
void term_grad(LossKind kind, const double* p, const double* t, Index width, double g,
               double* gp) {
  switch (kind) {
    case LossKind::kMse:
      gp[0] += g * 2.0 * (p[0] - t[0]);
      return;
    case LossKind::kBce: {
      double d = 0.0;
      if (std::log(p[0]) > kLogFloor) d -= t[0] / p[0];
      if (std::log(1.0 - p[0]) > kLogFloor) d += (1.0 - t[0]) / (1.0 - p[0]);
      gp[0] += g * d;
      return;
    }
    case LossKind::kCrossEntropy: {
      const double top = *std::max_element(p, p + width);
      double acc = 0.0;
      for (Index k = 0; k < width; ++k) acc += std::exp(p[k] - top);
      const auto cls = static_cast<Index>(t[0]);
      for (Index k = 0; k < width; ++k) {
        const double soft = std::exp(p[k] - top) / acc;
        gp[k] += g * (soft - (k == cls ? 1.0 : 0.0));
      }
      return;
    }
  }
}

const char* kernel_name(LossKind kind) {
  switch (kind) {
    case LossKind::kMse: return "mse_loss";
    case LossKind::kCrossEntropy: return "cross_entropy_loss";
    case LossKind::kBce: return "bce_loss";
  }
  return "loss";
}

// Shared kernel: `models` slices laid out back to back in pred; target is
// either shared (stride 0) or per model.
Tensor loss_kernel(LossKind kind, const Tensor& pred, const Tensor& target, Index models,
                   const Slice& s, bool shared_target, Reduction reduction, Shape out_shape) {
  KernelCounter::record(kernel_name(kind));
  const Index pred_stride = s.terms * s.width;
  const Index target_stride = shared_target ? 0 : s.terms;  // one target value per term
  auto pd = pred.data();
  auto td = target.data();

  std::vector<double> out(static_cast<std::size_t>(numel(out_shape)));
  for (Index b = 0; b < models; ++b) {
    const double* pb = pd.data() + b * pred_stride;
    const double* tb = td.data() + b * target_stride;
    double acc = 0.0;
    for (Index i = 0; i < s.terms; ++i) {
      const double v = term_value(kind, pb + i * s.width, tb + i, s.width);
      if (reduction == Reduction::kNone) {
        out[b * s.terms + i] = v;
      } else {
        acc += v;
      }
    }
    if (reduction == Reduction::kMean) out[b] = acc / static_cast<double>(s.terms);
    if (reduction == Reduction::kSum) out[b] = acc;
  }
  return make_result(kernel_name(kind), std::move(out_shape), std::move(out), {pred, target},
                     [kind, pred, target, models, s, pred_stride, target_stride,
                      reduction](const BackwardContext& ctx) {
                       if (!ctx.needs(0)) return;
                       auto g = ctx.grad_output();
                       auto gp = ctx.grad_input(0);
                       auto pd = pred.data();
                       auto td = target.data();
                       for (Index b = 0; b < models; ++b) {
                         for (Index i = 0; i < s.terms; ++i) {
                           double gi = 0.0;
                           switch (reduction) {
                             case Reduction::kNone: gi = g[b * s.terms + i]; break;
                             case Reduction::kSum: gi = g[b]; break;
                             case Reduction::kMean: gi = g[b] / static_cast<double>(s.terms); break;
                           }
                           const Index off = b * pred_stride + i * s.width;
                           term_grad(kind, pd.data() + off,
                                     td.data() + b * target_stride + i, s.width, gi,
                                     gp.data() + off);
                         }
                       }
                     });
}

}  // namespace

Tensor serial_loss(LossKind kind, const Tensor& pred, const Tensor& target, Reduction reduction) {
  const Slice s = slice_of(kind, pred.shape(), target.shape());
  Shape out_shape = reduction == Reduction::kNone ? Shape{s.terms} : Shape{1};
  return loss_kernel(kind, pred, target, 1, s, true, reduction, std::move(out_shape));
}

Tensor per_model_losses(LossKind kind, const Tensor& preds, const Tensor& target,
                        Reduction reduction) {
  if (preds.dim() < 2) {
    throw DimensionError("per-model losses expect model-leading predictions, got " +
                         to_string(preds.shape()));
  }
  const Index models = preds.size(0);
  const Shape serial_pred(preds.shape().begin() + 1, preds.shape().end());
  const bool shared = target.dim() < preds.dim() - (kind == LossKind::kCrossEntropy ? 1 : 0);
  Shape serial_target = target.shape();
  if (!shared) {
    if (target.size(0) != models) {
      throw DimensionError("per-model targets " + to_string(target.shape()) + " do not lead with " +
                           std::to_string(models) + " models");
    }
    serial_target.erase(serial_target.begin());
  }
  const Slice s = slice_of(kind, serial_pred, serial_target);
  Shape out_shape = reduction == Reduction::kNone ? Shape{models, s.terms} : Shape{models};
  return loss_kernel(kind, preds, target, models, s, shared, reduction, std::move(out_shape));
}

FusedLossValue fuse_losses(const Tensor& per_model, Reduction reduction) {
  if (!per_model.defined() || per_model.dim() < 1) {
    throw FusionError("empty fusion: no per-model losses");
  }
  FusedLossValue v;
  v.model_count = per_model.size(0);
  v.reduction = reduction;
  v.per_model = per_model;
  switch (reduction) {
    case Reduction::kMean:
      v.raw = mean(per_model);
      v.scaled = scale(v.raw, static_cast<double>(v.model_count));
      break;
    case Reduction::kSum:
      v.raw = sum(per_model);
      v.scaled = v.raw;
      break;
    case Reduction::kNone:
      v.raw = per_model;
      v.scaled = per_model;
      break;
  }
  return v;
}

FusedLossValue fused_loss(LossKind kind, const Tensor& preds, const Tensor& target,
                          Reduction reduction) {
  return fuse_losses(per_model_losses(kind, preds, target, reduction), reduction);
}

FusedLossValue fused_loss(LossKind kind, std::span<const Tensor> preds,
                          std::span<const Tensor> targets, Reduction reduction) {
  if (preds.empty()) throw FusionError("empty fusion: B == 0");
  if (targets.size() != preds.size()) {
    throw DimensionError("fused loss needs one target per model prediction");
  }
  for (const Tensor& p : preds) {
    if (p.shape() != preds[0].shape()) throw DimensionError("per-model prediction shapes differ");
  }
  return fused_loss(kind, stack_models(preds, FusedLayout::kModelLeading),
                    stack_models(targets, FusedLayout::kModelLeading), reduction);
}

}  // namespace hfta
