#include "hfta/conv.h"

#include <atomic>

#include "hfta/autograd.h"
#include "hfta/errors.h"
#include "hfta/fault.h"
#include "hfta/kernel_counter.h"

namespace hfta {
namespace {

std::atomic<Fault> injected_fault{Fault::kNone};

using Index = std::int64_t;

// All convolutions run as 2-D; a 1-D conv is a 2-D conv with unit height.
struct Geometry {
  Index n, cin, h, w;
  Index cout, oh, ow;
  Index kh, kw, sh, sw, ph, pw;
  Index groups, cin_g, cout_g;
};

Geometry make_geometry(const Shape& in, const Shape& out, const ConvConfig& cfg) {
  Geometry g{};
  const bool one_d = cfg.spatial_dims() == 1;
  g.n = in[0];
  g.cin = in[1];
  g.h = one_d ? 1 : in[2];
  g.w = one_d ? in[2] : in[3];
  g.cout = out[1];
  g.oh = one_d ? 1 : out[2];
  g.ow = one_d ? out[2] : out[3];
  g.kh = one_d ? 1 : cfg.kernel[0];
  g.kw = cfg.kernel.back();
  g.sh = one_d ? 1 : cfg.stride[0];
  g.sw = cfg.stride.back();
  g.ph = one_d ? 0 : cfg.padding[0];
  g.pw = cfg.padding.back();
  g.groups = cfg.groups;
  g.cin_g = cfg.in_channels / cfg.groups;
  g.cout_g = cfg.out_channels / cfg.groups;
  return g;
}

inline Index xi(const Geometry& g, Index n, Index c, Index h, Index w) {
  return ((n * g.cin + c) * g.h + h) * g.w + w;
}
inline Index yi(const Geometry& g, Index n, Index c, Index h, Index w) {
  return ((n * g.cout + c) * g.oh + h) * g.ow + w;
}
inline Index wi(const Geometry& g, Index o, Index ic, Index kh, Index kw, Index in_per_group) {
  return ((o * in_per_group + ic) * g.kh + kh) * g.kw + kw;
}

void conv_forward(const Geometry& g, const double* x, const double* w, double* y) {
  for (Index n = 0; n < g.n; ++n) {
    for (Index o = 0; o < g.cout; ++o) {
      const Index grp = o / g.cout_g;
      for (Index oh = 0; oh < g.oh; ++oh) {
        for (Index ow = 0; ow < g.ow; ++ow) {
          double acc = 0.0;
          for (Index ic = 0; ic < g.cin_g; ++ic) {
            const Index c = grp * g.cin_g + ic;
            for (Index kh = 0; kh < g.kh; ++kh) {
              const Index ih = oh * g.sh - g.ph + kh;
              if (ih < 0 || ih >= g.h) continue;
              for (Index kw = 0; kw < g.kw; ++kw) {
                const Index iw = ow * g.sw - g.pw + kw;
                if (iw < 0 || iw >= g.w) continue;
                acc += x[xi(g, n, c, ih, iw)] * w[wi(g, o, ic, kh, kw, g.cin_g)];
              }
            }
          }
          y[yi(g, n, o, oh, ow)] = acc;
        }
      }
    }
  }
}

void conv_backward(const Geometry& g, const double* x, const double* w, const double* gy,
                   double* gx, double* gw) {
  for (Index n = 0; n < g.n; ++n) {
    for (Index o = 0; o < g.cout; ++o) {
      const Index grp = o / g.cout_g;
      for (Index oh = 0; oh < g.oh; ++oh) {
        for (Index ow = 0; ow < g.ow; ++ow) {
          const double go = gy[yi(g, n, o, oh, ow)];
          for (Index ic = 0; ic < g.cin_g; ++ic) {
            const Index c = grp * g.cin_g + ic;
            for (Index kh = 0; kh < g.kh; ++kh) {
              const Index ih = oh * g.sh - g.ph + kh;
              if (ih < 0 || ih >= g.h) continue;
              for (Index kw = 0; kw < g.kw; ++kw) {
                const Index iw = ow * g.sw - g.pw + kw;
                if (iw < 0 || iw >= g.w) continue;
                const Index widx = wi(g, o, ic, kh, kw, g.cin_g);
                const Index xidx = xi(g, n, c, ih, iw);
                if (gx) gx[xidx] += go * w[widx];
                if (gw) gw[widx] += go * x[xidx];
              }
            }
          }
        }
      }
    }
  }
}

// Transposed: every input pixel scatters a kernel-sized patch.
void deconv_forward(const Geometry& g, const double* x, const double* w, double* y) {
  for (Index n = 0; n < g.n; ++n) {
    for (Index c = 0; c < g.cin; ++c) {
      const Index grp = c / g.cin_g;
      const Index ic = c % g.cin_g;
      for (Index ih = 0; ih < g.h; ++ih) {
        for (Index iw = 0; iw < g.w; ++iw) {
          const double xv = x[xi(g, n, c, ih, iw)];
          for (Index ol = 0; ol < g.cout_g; ++ol) {
            const Index o = grp * g.cout_g + ol;
            for (Index kh = 0; kh < g.kh; ++kh) {
              const Index oh = ih * g.sh - g.ph + kh;
              if (oh < 0 || oh >= g.oh) continue;
              for (Index kw = 0; kw < g.kw; ++kw) {
                const Index ow = iw * g.sw - g.pw + kw;
                if (ow < 0 || ow >= g.ow) continue;
                y[yi(g, n, o, oh, ow)] += xv * w[wi(g, o, ic, kh, kw, g.cin_g)];
              }
            }
          }
        }
      }
    }
  }
}

void deconv_backward(const Geometry& g, const double* x, const double* w, const double* gy,
                     double* gx, double* gw) {
  for (Index n = 0; n < g.n; ++n) {
    for (Index c = 0; c < g.cin; ++c) {
      const Index grp = c / g.cin_g;
      const Index ic = c % g.cin_g;
      for (Index ih = 0; ih < g.h; ++ih) {
        for (Index iw = 0; iw < g.w; ++iw) {
          const Index xidx = xi(g, n, c, ih, iw);
          double acc = 0.0;
          for (Index ol = 0; ol < g.cout_g; ++ol) {
            const Index o = grp * g.cout_g + ol;
            for (Index kh = 0; kh < g.kh; ++kh) {
              const Index oh = ih * g.sh - g.ph + kh;
              if (oh < 0 || oh >= g.oh) continue;
              for (Index kw = 0; kw < g.kw; ++kw) {
                const Index ow = iw * g.sw - g.pw + kw;
                if (ow < 0 || ow >= g.ow) continue;
                const double go = gy[yi(g, n, o, oh, ow)];
                const Index widx = wi(g, o, ic, kh, kw, g.cin_g);
                acc += go * w[widx];
                if (gw) gw[widx] += go * x[xidx];
              }
            }
          }
          if (gx) gx[xidx] += acc;
        }
      }
    }
  }
}

const char* field_difference(const ConvConfig& a, const ConvConfig& b) {
  if (a.in_channels != b.in_channels) return "in_channels";
  if (a.out_channels != b.out_channels) return "out_channels";
  if (a.kernel != b.kernel) return "kernel_size";
  if (a.stride != b.stride) return "stride";
  if (a.padding != b.padding) return "padding";
  if (a.groups != b.groups) return "groups";
  if (a.transposed != b.transposed) return "transposed";
  return nullptr;
}

}  // namespace

void set_fault(Fault fault) { injected_fault.store(fault); }
Fault active_fault() { return injected_fault.load(); }

void ConvConfig::validate() const {
  const std::size_t dims = kernel.size();
  if (dims != 1 && dims != 2) throw ConfigError("convolution supports 1 or 2 spatial dims");
  if (transposed && dims != 2) throw ConfigError("transposed convolution is 2-D only");
  if (stride.size() != dims || padding.size() != dims) {
    throw ConfigError("stride/padding rank must match kernel rank");
  }
  if (in_channels < 1 || out_channels < 1 || groups < 1) {
    throw ConfigError("channel and group counts must be positive");
  }
  if (in_channels % groups != 0) {
    throw ConfigError("in_channels " + std::to_string(in_channels) + " not divisible by groups " +
                      std::to_string(groups));
  }
  if (out_channels % groups != 0) {
    throw ConfigError("out_channels " + std::to_string(out_channels) +
                      " not divisible by groups " + std::to_string(groups));
  }
  for (std::size_t d = 0; d < dims; ++d) {
    if (kernel[d] < 1 || stride[d] < 1 || padding[d] < 0) {
      throw ConfigError("kernel and stride must be positive, padding non-negative");
    }
  }
}

Shape ConvConfig::weight_shape() const {
  Shape s{out_channels, in_channels / groups};
  s.insert(s.end(), kernel.begin(), kernel.end());
  return s;
}

Shape ConvConfig::output_shape(const Shape& input) const {
  validate();
  const std::size_t dims = spatial_dims();
  if (input.size() != dims + 2) {
    throw DimensionError("convolution expects rank " + std::to_string(dims + 2) + " input, got " +
                         to_string(input));
  }
  if (input[1] != in_channels) {
    throw DimensionError("convolution expects " + std::to_string(in_channels) +
                         " input channels, got " + to_string(input));
  }
  Shape out{input[0], out_channels};
  for (std::size_t d = 0; d < dims; ++d) {
    const std::int64_t in = input[d + 2];
    std::int64_t extent = 0;
    if (transposed) {
      extent = (in - 1) * stride[d] - 2 * padding[d] + kernel[d];
    } else {
      const std::int64_t span = in + 2 * padding[d] - kernel[d];
      extent = span < 0 ? 0 : span / stride[d] + 1;
    }
    if (extent <= 0) {
      throw ShapeError("convolution output extent is non-positive for input " + to_string(input));
    }
    out.push_back(extent);
  }
  return out;
}

Tensor grouped_conv_forward(const Tensor& x, const Tensor& weight, const Tensor& bias,
                            const ConvConfig& cfg) {
  const Shape out_shape = cfg.output_shape(x.shape());
  if (weight.shape() != cfg.weight_shape()) {
    throw DimensionError("convolution weight " + to_string(weight.shape()) + ", expected " +
                         to_string(cfg.weight_shape()));
  }
  if (bias.defined() && bias.shape() != cfg.bias_shape()) {
    throw DimensionError("convolution bias " + to_string(bias.shape()) + ", expected " +
                         to_string(cfg.bias_shape()));
  }
  const Geometry g = make_geometry(x.shape(), out_shape, cfg);
  KernelCounter::record(cfg.transposed ? "conv_transpose" : "conv");

  std::vector<double> y(static_cast<std::size_t>(numel(out_shape)), 0.0);
  if (cfg.transposed) {
    deconv_forward(g, x.data().data(), weight.data().data(), y.data());
  } else {
    conv_forward(g, x.data().data(), weight.data().data(), y.data());
  }
  if (bias.defined()) {
    auto bd = bias.data();
    const Index plane = g.oh * g.ow;
    for (Index n = 0; n < g.n; ++n)
      for (Index o = 0; o < g.cout; ++o)
        for (Index p = 0; p < plane; ++p) y[(n * g.cout + o) * plane + p] += bd[o];
  }

  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  const bool transposed = cfg.transposed;
  return make_result(transposed ? "conv_transpose" : "conv", out_shape, std::move(y), inputs,
                     [g, x, weight, transposed](const BackwardContext& ctx) {
                       const double* gy = ctx.grad_output().data();
                       double* gx = ctx.needs(0) ? ctx.grad_input(0).data() : nullptr;
                       double* gw = ctx.needs(1) ? ctx.grad_input(1).data() : nullptr;
                       if (gx || gw) {
                         if (transposed) {
                           deconv_backward(g, x.data().data(), weight.data().data(), gy, gx, gw);
                         } else {
                           conv_backward(g, x.data().data(), weight.data().data(), gy, gx, gw);
                         }
                       }
                       if (ctx.needs(2)) {
                         auto gb = ctx.grad_input(2);
                         const Index plane = g.oh * g.ow;
                         for (Index n = 0; n < g.n; ++n)
                           for (Index o = 0; o < g.cout; ++o)
                             for (Index p = 0; p < plane; ++p)
                               gb[o] += gy[(n * g.cout + o) * plane + p];
                       }
                     });
}

ConvConfig fuse_conv_config(std::span<const ConvConfig> configs) {
  if (configs.empty()) throw FusionError("cannot fuse zero convolutions");
  const ConvConfig& base = configs[0];
  base.validate();
  for (std::size_t b = 1; b < configs.size(); ++b) {
    if (const char* field = field_difference(base, configs[b])) {
      throw InfusibleError(field, std::string("convolution field '") + field +
                                      "' differs between model 0 and model " + std::to_string(b));
    }
  }
  const auto models = static_cast<std::int64_t>(configs.size());
  ConvConfig fused = base;
  fused.in_channels = models * base.in_channels;
  fused.out_channels = models * base.out_channels;
  fused.groups = models * base.groups;
  if (active_fault() == Fault::kConvGroupsOffByOne && fused.groups > 1) fused.groups -= 1;
  return fused;
}

FusedConv fuse_conv_family(std::span<const ConvConfig> configs, std::span<const Tensor> weights,
                           std::span<const Tensor> biases) {
  ConvConfig fused = fuse_conv_config(configs);
  if (weights.size() != configs.size() || (!biases.empty() && biases.size() != configs.size())) {
    throw FusionError("one weight (and bias) per fused model is required");
  }
  for (const Tensor& w : weights) {
    if (w.shape() != configs[0].weight_shape()) {
      throw InfusibleError("weight", "convolution weight " + to_string(w.shape()) +
                                         " does not match its config");
    }
  }
  FusedConv out{fused, FusedParameter::concat(weights, 0), {}};
  if (!biases.empty()) out.bias = FusedParameter::concat(biases, 0);
  return out;
}

}  // namespace hfta
