#include "hfta/norm.h"

#include <cmath>

#include "hfta/autograd.h"
#include "hfta/errors.h"
#include "hfta/kernel_counter.h"

namespace hfta {
namespace {

using Index = std::int64_t;

struct ChannelView {
  Index n, c, plane;
};

ChannelView channel_view(const Tensor& x, std::int64_t channels) {
  const Shape& s = x.shape();
  if (s.size() < 2) throw DimensionError("batch norm expects [N, C, ...], got " + to_string(s));
  if (s[1] != channels) {
    throw DimensionError("batch norm over " + std::to_string(channels) + " channels got " +
                         to_string(s));
  }
  Index plane = 1;
  for (std::size_t d = 2; d < s.size(); ++d) plane *= s[d];
  return {s[0], s[1], plane};
}

}  // namespace

BatchNormState BatchNormState::initial(std::int64_t channels) {
  BatchNormState s{Tensor::ones({channels}), Tensor::zeros({channels}), Tensor::zeros({channels}),
                   Tensor::ones({channels})};
  s.weight.set_requires_grad(true);
  s.bias.set_requires_grad(true);
  return s;
}

Tensor batch_norm(const Tensor& x, const Tensor& weight, const Tensor& bias,
                  const Tensor& running_mean, const Tensor& running_var, bool training,
                  double momentum, double eps) {
  const Index channels = weight.numel();
  const ChannelView v = channel_view(x, channels);
  if (bias.numel() != channels || running_mean.numel() != channels ||
      running_var.numel() != channels) {
    throw DimensionError("batch norm parameter/statistic extents disagree");
  }
  const Index count = v.n * v.plane;
  if (training && count < 2) {
    throw ShapeError("batch norm training needs more than one value per channel");
  }
  KernelCounter::record("batch_norm");

  auto xd = x.data();
  auto wd = weight.data();
  auto bd = bias.data();
  std::vector<double> mean(channels), invstd(channels);
  if (training) {
    auto rm = running_mean.mutable_data();
    auto rv = running_var.mutable_data();
    for (Index c = 0; c < channels; ++c) {
      double acc = 0.0;
      for (Index n = 0; n < v.n; ++n)
        for (Index p = 0; p < v.plane; ++p) acc += xd[(n * v.c + c) * v.plane + p];
      const double mu = acc / static_cast<double>(count);
      double sq = 0.0;
      for (Index n = 0; n < v.n; ++n)
        for (Index p = 0; p < v.plane; ++p) {
          const double d = xd[(n * v.c + c) * v.plane + p] - mu;
          sq += d * d;
        }
      const double var = sq / static_cast<double>(count);
      mean[c] = mu;
      invstd[c] = 1.0 / std::sqrt(var + eps);
      rm[c] = (1.0 - momentum) * rm[c] + momentum * mu;
      rv[c] = (1.0 - momentum) * rv[c] +
              momentum * (sq / static_cast<double>(count - 1));
    }
  } else {
    auto rm = running_mean.data();
    auto rv = running_var.data();
    for (Index c = 0; c < channels; ++c) {
      mean[c] = rm[c];
      invstd[c] = 1.0 / std::sqrt(rv[c] + eps);
    }
  }

  std::vector<double> y(xd.size());
  for (Index n = 0; n < v.n; ++n)
    for (Index c = 0; c < channels; ++c)
      for (Index p = 0; p < v.plane; ++p) {
        const Index i = (n * v.c + c) * v.plane + p;
        y[i] = (xd[i] - mean[c]) * invstd[c] * wd[c] + bd[c];
      }

  return make_result(
      "batch_norm", x.shape(), std::move(y), {x, weight, bias},
      [x, weight, v, mean, invstd, training, count](const BackwardContext& ctx) {
        auto g = ctx.grad_output();
        auto xd = x.data();
        auto wd = weight.data();
        const Index channels = v.c;
        for (Index c = 0; c < channels; ++c) {
          double sum_g = 0.0, sum_gx = 0.0;
          for (Index n = 0; n < v.n; ++n)
            for (Index p = 0; p < v.plane; ++p) {
              const Index i = (n * v.c + c) * v.plane + p;
              const double xhat = (xd[i] - mean[c]) * invstd[c];
              sum_g += g[i];
              sum_gx += g[i] * xhat;
            }
          if (ctx.needs(1)) ctx.grad_input(1)[c] += sum_gx;
          if (ctx.needs(2)) ctx.grad_input(2)[c] += sum_g;
          if (!ctx.needs(0)) continue;
          auto gx = ctx.grad_input(0);
          const double k = wd[c] * invstd[c];
          const double inv_count = 1.0 / static_cast<double>(count);
          for (Index n = 0; n < v.n; ++n)
            for (Index p = 0; p < v.plane; ++p) {
              const Index i = (n * v.c + c) * v.plane + p;
              if (training) {
                const double xhat = (xd[i] - mean[c]) * invstd[c];
                gx[i] += k * (g[i] - sum_g * inv_count - xhat * sum_gx * inv_count);
              } else {
                gx[i] += k * g[i];
              }
            }
        }
      });
}

FusedBatchNorm fuse_batchnorm(std::span<const BatchNormConfig> configs,
                              std::span<const BatchNormState> states) {
  if (configs.empty()) throw FusionError("cannot fuse zero batch norms");
  if (states.size() != configs.size()) throw FusionError("one state per fused batch norm is required");
  const BatchNormConfig& base = configs[0];
  for (std::size_t b = 1; b < configs.size(); ++b) {
    const char* field = nullptr;
    if (configs[b].num_features != base.num_features) field = "num_features";
    else if (configs[b].eps != base.eps) field = "eps";
    else if (configs[b].momentum != base.momentum) field = "momentum";
    if (field) {
      throw InfusibleError(field, std::string("batch norm field '") + field +
                                      "' differs between model 0 and model " + std::to_string(b));
    }
  }
  std::vector<Tensor> w, bias, rm, rv;
  for (const BatchNormState& s : states) {
    w.push_back(s.weight);
    bias.push_back(s.bias);
    rm.push_back(s.running_mean);
    rv.push_back(s.running_var);
  }
  FusedBatchNorm fused{base, FusedParameter::concat(w), FusedParameter::concat(bias),
                       FusedParameter::concat(rm), FusedParameter::concat(rv)};
  fused.config.num_features = base.num_features * static_cast<std::int64_t>(configs.size());
  fused.running_mean.value.set_requires_grad(false);
  fused.running_var.value.set_requires_grad(false);
  return fused;
}

Tensor layer_norm(const Tensor& x, std::int64_t normalized_numel, double eps) {
  const Index e = normalized_numel;
  if (e < 1 || x.numel() % e != 0) {
    throw DimensionError("layer norm over " + std::to_string(e) + " elements cannot split " +
                         to_string(x.shape()));
  }
  KernelCounter::record("layer_norm");
  const Index rows = x.numel() / e;
  auto xd = x.data();
  std::vector<double> y(xd.size());
  std::vector<double> invstd(rows);
  for (Index r = 0; r < rows; ++r) {
    const double* row = xd.data() + r * e;
    double acc = 0.0;
    for (Index j = 0; j < e; ++j) acc += row[j];
    const double mu = acc / static_cast<double>(e);
    double sq = 0.0;
    for (Index j = 0; j < e; ++j) sq += (row[j] - mu) * (row[j] - mu);
    invstd[r] = 1.0 / std::sqrt(sq / static_cast<double>(e) + eps);
    for (Index j = 0; j < e; ++j) y[r * e + j] = (row[j] - mu) * invstd[r];
  }
  std::vector<double> xhat = y;
  return make_result("layer_norm", x.shape(), std::move(y), {x},
                     [xhat = std::move(xhat), invstd, rows, e](const BackwardContext& ctx) {
                       auto g = ctx.grad_output();
                       auto gx = ctx.grad_input(0);
                       const double inv_e = 1.0 / static_cast<double>(e);
                       for (Index r = 0; r < rows; ++r) {
                         double sum_g = 0.0, sum_gx = 0.0;
                         for (Index j = 0; j < e; ++j) {
                           sum_g += g[r * e + j];
                           sum_gx += g[r * e + j] * xhat[r * e + j];
                         }
                         for (Index j = 0; j < e; ++j) {
                           const Index i = r * e + j;
                           gx[i] += invstd[r] * (g[i] - sum_g * inv_e - xhat[i] * sum_gx * inv_e);
                         }
                       }
                     });
}

Tensor per_model_affine(const Tensor& x, const Tensor& weight, const Tensor& bias,
                        std::int64_t models) {
  if (models < 1 || weight.numel() % models != 0 || bias.numel() != weight.numel()) {
    throw DimensionError("affine parameters do not split over " + std::to_string(models) +
                         " models");
  }
  const Index e = weight.numel() / models;
  if (x.numel() % (models * e) != 0) {
    throw DimensionError("affine over " + to_string(weight.shape()) + " cannot cover " +
                         to_string(x.shape()));
  }
  KernelCounter::record("affine");
  const Index m = x.numel() / (models * e);
  auto xd = x.data();
  auto wd = weight.data();
  auto bd = bias.data();
  std::vector<double> y(xd.size());
  for (Index b = 0; b < models; ++b)
    for (Index i = 0; i < m; ++i)
      for (Index j = 0; j < e; ++j) {
        const Index k = (b * m + i) * e + j;
        y[k] = xd[k] * wd[b * e + j] + bd[b * e + j];
      }
  return make_result("affine", x.shape(), std::move(y), {x, weight, bias},
                     [x, weight, models, m, e](const BackwardContext& ctx) {
                       auto g = ctx.grad_output();
                       auto xd = x.data();
                       auto wd = weight.data();
                       for (Index b = 0; b < models; ++b)
                         for (Index i = 0; i < m; ++i)
                           for (Index j = 0; j < e; ++j) {
                             const Index k = (b * m + i) * e + j;
                             if (ctx.needs(0)) ctx.grad_input(0)[k] += g[k] * wd[b * e + j];
                             if (ctx.needs(1)) ctx.grad_input(1)[b * e + j] += g[k] * xd[k];
                             if (ctx.needs(2)) ctx.grad_input(2)[b * e + j] += g[k];
                           }
                     });
}

namespace {

void check_normalized_tail(const Shape& x, const Shape& normalized, std::size_t lead) {
  bool ok = x.size() >= normalized.size() + lead;
  for (std::size_t i = 0; ok && i < normalized.size(); ++i) {
    ok = x[x.size() - normalized.size() + i] == normalized[i];
  }
  if (!ok) {
    throw DimensionError("layer norm over " + to_string(normalized) + " does not fit input " +
                         to_string(x));
  }
}

}  // namespace

Tensor layer_norm_affine(const Tensor& x, const Tensor& weight, const Tensor& bias,
                         const LayerNormConfig& cfg) {
  check_normalized_tail(x.shape(), cfg.normalized_shape, 1);
  if (weight.shape() != cfg.normalized_shape || bias.shape() != cfg.normalized_shape) {
    throw DimensionError("layer norm affine parameters must be " + to_string(cfg.normalized_shape));
  }
  return per_model_affine(layer_norm(x, numel(cfg.normalized_shape), cfg.eps), weight, bias, 1);
}

FusedLayerNorm fuse_layernorm(std::span<const LayerNormConfig> configs,
                              std::span<const Tensor> weights, std::span<const Tensor> biases) {
  if (configs.empty()) throw FusionError("cannot fuse zero layer norms");
  if (weights.size() != configs.size() || biases.size() != configs.size()) {
    throw FusionError("one weight and bias per fused layer norm is required");
  }
  for (std::size_t b = 1; b < configs.size(); ++b) {
    if (configs[b].normalized_shape != configs[0].normalized_shape) {
      throw InfusibleError("normalized_shape", "layer norm normalized_shape differs for model " +
                                                   std::to_string(b));
    }
    if (configs[b].eps != configs[0].eps) {
      throw InfusibleError("eps", "layer norm eps differs for model " + std::to_string(b));
    }
  }
  return {configs[0], FusedParameter::stack(weights), FusedParameter::stack(biases)};
}

Tensor fused_layer_norm(const Tensor& x, const Tensor& weight, const Tensor& bias,
                        const LayerNormConfig& cfg) {
  check_normalized_tail(x.shape(), cfg.normalized_shape, 2);
  const std::int64_t models = x.size(0);
  if (weight.size(0) != models) {
    throw DimensionError("fused layer norm weight " + to_string(weight.shape()) +
                         " does not lead with " + std::to_string(models) + " models");
  }
  return per_model_affine(layer_norm(x, numel(cfg.normalized_shape), cfg.eps), weight, bias,
                          models);
}

}  // namespace hfta
