#include "hfta/pool.h"

#include <limits>

#include "hfta/autograd.h"
#include "hfta/errors.h"
#include "hfta/kernel_counter.h"

namespace hfta {

Shape PoolConfig::output_shape(const Shape& input) const {
  if (input.size() != 4) throw DimensionError("2-D pooling expects [N, C, H, W], got " + to_string(input));
  if (kind == PoolKind::kAdaptiveAvg2d) {
    if (output_size.size() != 2 || output_size[0] < 1 || output_size[1] < 1) {
      throw ConfigError("adaptive pooling output size must be two positive extents");
    }
    return {input[0], input[1], output_size[0], output_size[1]};
  }
  if (kernel.size() != 2 || stride.size() != 2 || padding.size() != 2) {
    throw ConfigError("max pooling needs 2-D kernel, stride and padding");
  }
  Shape out{input[0], input[1]};
  for (std::size_t d = 0; d < 2; ++d) {
    if (kernel[d] < 1 || stride[d] < 1 || padding[d] < 0) {
      throw ConfigError("pooling kernel/stride must be positive, padding non-negative");
    }
    const std::int64_t padded = input[d + 2] + 2 * padding[d];
    if (kernel[d] > padded) {
      throw ShapeError("pooling window " + std::to_string(kernel[d]) +
                       " larger than padded input " + std::to_string(padded));
    }
    out.push_back((padded - kernel[d]) / stride[d] + 1);
  }
  return out;
}

Tensor pool2d(const Tensor& x, const PoolConfig& cfg) {
  const Shape out_shape = cfg.output_shape(x.shape());
  const std::int64_t planes = x.size(0) * x.size(1);
  const std::int64_t h = x.size(2), w = x.size(3);
  const std::int64_t oh = out_shape[2], ow = out_shape[3];
  auto xd = x.data();
  std::vector<double> y(static_cast<std::size_t>(numel(out_shape)));

  if (cfg.kind == PoolKind::kMax2d) {
    KernelCounter::record("max_pool2d");
    std::vector<std::int64_t> argmax(y.size(), -1);
    for (std::int64_t p = 0; p < planes; ++p)
      for (std::int64_t i = 0; i < oh; ++i)
        for (std::int64_t j = 0; j < ow; ++j) {
          double best = -std::numeric_limits<double>::infinity();
          std::int64_t arg = -1;
          for (std::int64_t ki = 0; ki < cfg.kernel[0]; ++ki) {
            const std::int64_t ih = i * cfg.stride[0] - cfg.padding[0] + ki;
            if (ih < 0 || ih >= h) continue;
            for (std::int64_t kj = 0; kj < cfg.kernel[1]; ++kj) {
              const std::int64_t iw = j * cfg.stride[1] - cfg.padding[1] + kj;
              if (iw < 0 || iw >= w) continue;
              const std::int64_t idx = (p * h + ih) * w + iw;
              if (arg < 0 || xd[idx] > best) {
                best = xd[idx];
                arg = idx;
              }
            }
          }
          if (arg < 0) throw ShapeError("pooling window covers only padding");
          const std::int64_t o = (p * oh + i) * ow + j;
          y[o] = best;
          argmax[o] = arg;
        }
    return make_result("max_pool2d", out_shape, std::move(y), {x},
                       [argmax = std::move(argmax)](const BackwardContext& ctx) {
                         auto g = ctx.grad_output();
                         auto gx = ctx.grad_input(0);
                         for (std::size_t o = 0; o < argmax.size(); ++o) gx[argmax[o]] += g[o];
                       });
  }

  KernelCounter::record("adaptive_avg_pool2d");
  auto start = [](std::int64_t i, std::int64_t in, std::int64_t out) { return (i * in) / out; };
  auto stop = [](std::int64_t i, std::int64_t in, std::int64_t out) {
    return ((i + 1) * in + out - 1) / out;
  };
  for (std::int64_t p = 0; p < planes; ++p)
    for (std::int64_t i = 0; i < oh; ++i)
      for (std::int64_t j = 0; j < ow; ++j) {
        const std::int64_t h0 = start(i, h, oh), h1 = stop(i, h, oh);
        const std::int64_t w0 = start(j, w, ow), w1 = stop(j, w, ow);
        double acc = 0.0;
        for (std::int64_t a = h0; a < h1; ++a)
          for (std::int64_t b = w0; b < w1; ++b) acc += xd[(p * h + a) * w + b];
        y[(p * oh + i) * ow + j] = acc / static_cast<double>((h1 - h0) * (w1 - w0));
      }
  return make_result("adaptive_avg_pool2d", out_shape, std::move(y), {x},
                     [planes, h, w, oh, ow, start, stop](const BackwardContext& ctx) {
                       auto g = ctx.grad_output();
                       auto gx = ctx.grad_input(0);
                       for (std::int64_t p = 0; p < planes; ++p)
                         for (std::int64_t i = 0; i < oh; ++i)
                           for (std::int64_t j = 0; j < ow; ++j) {
                             const std::int64_t h0 = start(i, h, oh), h1 = stop(i, h, oh);
                             const std::int64_t w0 = start(j, w, ow), w1 = stop(j, w, ow);
                             const double share = g[(p * oh + i) * ow + j] /
                                                  static_cast<double>((h1 - h0) * (w1 - w0));
                             for (std::int64_t a = h0; a < h1; ++a)
                               for (std::int64_t b = w0; b < w1; ++b) gx[(p * h + a) * w + b] += share;
                           }
                     });
}

}  // namespace hfta
