#include "hfta/verify.h"

#include <algorithm>
#include <cmath>
#include <exception>
#include <functional>

#include "hfta/autograd.h"
#include "hfta/conv.h"
#include "hfta/dropout.h"
#include "hfta/embedding.h"
#include "hfta/errors.h"
#include "hfta/gradcheck.h"
#include "hfta/layout.h"
#include "hfta/linear.h"
#include "hfta/losses.h"
#include "hfta/norm.h"
#include "hfta/optim.h"
#include "hfta/pool.h"
#include "hfta/tensor_ops.h"
#include "hfta/trainer.h"
#include "hfta/zoo.h"

namespace hfta {
namespace {

constexpr double kFusionTol = 1e-10;
constexpr double kGradTol = 1e-9;
constexpr double kFdTol = 1e-4;
constexpr double kOptimTol = 1e-9;
constexpr double kConvergenceTol = 1e-9;

Tensor random_tensor(const Shape& shape, Rng& rng, bool grad = false, double scale = 1.0) {
  std::vector<double> data(static_cast<std::size_t>(numel(shape)));
  for (double& v : data) v = rng.normal(0.0, scale);
  return Tensor(shape, std::move(data), grad);
}

Tensor random_indices(const Shape& shape, std::int64_t limit, Rng& rng) {
  std::vector<double> data(static_cast<std::size_t>(numel(shape)));
  for (double& v : data) v = static_cast<double>(rng.below(static_cast<std::uint64_t>(limit)));
  return Tensor(shape, std::move(data));
}

std::int64_t pick(Rng& rng, std::int64_t lo, std::int64_t hi) {
  return lo + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
}

// Max deviation between each fused slice and the matching serial tensor.
double slice_diff(const Tensor& fused, FusedLayout layout, std::span<const Tensor> serial) {
  const std::vector<Tensor> parts = split_models(fused, layout, static_cast<std::int64_t>(serial.size()));
  double worst = 0.0;
  for (std::size_t b = 0; b < serial.size(); ++b) worst = std::max(worst, max_abs_diff(parts[b], serial[b]));
  return worst;
}

// Runs one family's random trials, turning exceptions into failures.
CheckResult run_family(const std::string& suite, const std::string& name, double tol,
                       const std::function<double()>& trials) {
  CheckResult r{suite, name, 0.0, tol, true, {}};
  try {
    r.max_deviation = trials();
    r.passed = r.max_deviation <= tol;
  } catch (const std::exception& e) {
    r.passed = false;
    r.max_deviation = INFINITY;
    r.detail = e.what();
  }
  return r;
}

double conv_trials(const VerifyOptions& opt, Rng rng, int variant) {
  double worst = 0.0;
  for (std::int64_t B : opt.fusion_models) {
    for (std::int64_t t = 0; t < opt.configs_per_family; ++t) {
      ConvConfig cfg;
      const std::size_t dims = variant == 0 ? 1 : 2;
      cfg.transposed = variant == 2;
      cfg.groups = pick(rng, 1, 2);
      cfg.in_channels = cfg.groups * pick(rng, 1, 3);
      cfg.out_channels = cfg.groups * pick(rng, 1, 3);
      cfg.kernel.assign(dims, 0);
      cfg.stride.assign(dims, 0);
      cfg.padding.assign(dims, 0);
      Shape x_shape{pick(rng, 1, 3), cfg.in_channels};
      for (std::size_t d = 0; d < dims; ++d) {
        cfg.kernel[d] = pick(rng, 1, 3);
        cfg.stride[d] = pick(rng, 1, 2);
        cfg.padding[d] = cfg.transposed ? pick(rng, 0, (cfg.kernel[d] - 1) / 2) : pick(rng, 0, cfg.kernel[d] - 1);
        x_shape.push_back(pick(rng, cfg.kernel[d], 6));
      }
      std::vector<ConvConfig> configs(B, cfg);
      std::vector<Tensor> xs, ws, bs, ys;
      for (std::int64_t b = 0; b < B; ++b) {
        xs.push_back(random_tensor(x_shape, rng));
        ws.push_back(random_tensor(cfg.weight_shape(), rng));
        bs.push_back(random_tensor(cfg.bias_shape(), rng));
        ys.push_back(grouped_conv_forward(xs[b], ws[b], bs[b], cfg));
      }
      const FusedConv fc = fuse_conv_family(configs, ws, bs);
      const Tensor y = grouped_conv_forward(stack_models(xs, FusedLayout::kChannelFolded),
                                            fc.weight.value, fc.bias.value, fc.config);
      worst = std::max(worst, slice_diff(y, FusedLayout::kChannelFolded, ys));
    }
  }
  return worst;
}

double linear_trials(const VerifyOptions& opt, Rng rng) {
  double worst = 0.0;
  for (std::int64_t B : opt.fusion_models) {
    for (std::int64_t t = 0; t < opt.configs_per_family; ++t) {
      const std::int64_t n = pick(rng, 1, 5), fx = pick(rng, 1, 7), fy = pick(rng, 1, 7);
      std::vector<Tensor> xs, ws, bs, ys;
      for (std::int64_t b = 0; b < B; ++b) {
        xs.push_back(random_tensor({n, fx}, rng));
        ws.push_back(random_tensor({fx, fy}, rng));
        bs.push_back(random_tensor({fy}, rng));
        ys.push_back(linear(xs[b], ws[b], bs[b]));
      }
      const FusedLinear fl = fuse_linear(ws, bs);
      const Tensor y = fused_linear(stack_models(xs, FusedLayout::kModelLeading), fl.weight.value,
                                    fl.bias.value);
      worst = std::max(worst, slice_diff(y, FusedLayout::kModelLeading, ys));
    }
  }
  return worst;
}

double batch_norm_trials(const VerifyOptions& opt, Rng rng) {
  double worst = 0.0;
  for (std::int64_t B : opt.fusion_models) {
    for (std::int64_t t = 0; t < opt.configs_per_family; ++t) {
      const bool spatial = rng.below(2) == 1;
      const bool training = rng.below(4) != 0;
      const std::int64_t c = pick(rng, 1, 4);
      Shape x_shape{pick(rng, 2, 4), c};
      if (spatial) {
        x_shape.push_back(pick(rng, 1, 3));
        x_shape.push_back(pick(rng, 1, 3));
      }
      const BatchNormConfig cfg{c, 1e-5, 0.1};
      std::vector<BatchNormConfig> configs(B, cfg);
      std::vector<BatchNormState> states;
      std::vector<Tensor> xs, ys;
      for (std::int64_t b = 0; b < B; ++b) {
        BatchNormState s{random_tensor({c}, rng), random_tensor({c}, rng), random_tensor({c}, rng),
                         Tensor({c}, std::vector<double>(c, 0.5 + rng.uniform()))};
        xs.push_back(random_tensor(x_shape, rng));
        states.push_back(s);
      }
      FusedBatchNorm fb = fuse_batchnorm(configs, states);
      for (std::int64_t b = 0; b < B; ++b) {
        ys.push_back(batch_norm(xs[b], states[b].weight, states[b].bias, states[b].running_mean,
                                states[b].running_var, training, cfg.momentum, cfg.eps));
      }
      const Tensor y = batch_norm(stack_models(xs, FusedLayout::kChannelFolded), fb.weight.value,
                                  fb.bias.value, fb.running_mean.value, fb.running_var.value,
                                  training, cfg.momentum, cfg.eps);
      worst = std::max(worst, slice_diff(y, FusedLayout::kChannelFolded, ys));
      for (std::int64_t b = 0; b < B; ++b) {
        worst = std::max(worst, max_abs_diff(fb.running_mean.model_slice(b), states[b].running_mean));
        worst = std::max(worst, max_abs_diff(fb.running_var.model_slice(b), states[b].running_var));
      }
    }
  }
  return worst;
}

double layer_norm_trials(const VerifyOptions& opt, Rng rng) {
  double worst = 0.0;
  for (std::int64_t B : opt.fusion_models) {
    for (std::int64_t t = 0; t < opt.configs_per_family; ++t) {
      LayerNormConfig cfg;
      cfg.normalized_shape = {pick(rng, 2, 5)};
      if (rng.below(2) == 1) cfg.normalized_shape.insert(cfg.normalized_shape.begin(), pick(rng, 1, 3));
      Shape x_shape{pick(rng, 1, 4)};
      x_shape.insert(x_shape.end(), cfg.normalized_shape.begin(), cfg.normalized_shape.end());
      std::vector<LayerNormConfig> configs(B, cfg);
      std::vector<Tensor> xs, ws, bs, ys;
      for (std::int64_t b = 0; b < B; ++b) {
        xs.push_back(random_tensor(x_shape, rng));
        ws.push_back(random_tensor(cfg.normalized_shape, rng));
        bs.push_back(random_tensor(cfg.normalized_shape, rng));
        ys.push_back(layer_norm_affine(xs[b], ws[b], bs[b], cfg));
      }
      const FusedLayerNorm fl = fuse_layernorm(configs, ws, bs);
      const Tensor y = fused_layer_norm(stack_models(xs, FusedLayout::kModelLeading),
                                        fl.weight.value, fl.bias.value, cfg);
      worst = std::max(worst, slice_diff(y, FusedLayout::kModelLeading, ys));
    }
  }
  return worst;
}

double embedding_trials(const VerifyOptions& opt, Rng rng) {
  double worst = 0.0;
  for (std::int64_t B : opt.fusion_models) {
    for (std::int64_t t = 0; t < opt.configs_per_family; ++t) {
      const EmbeddingConfig cfg{pick(rng, 1, 8), pick(rng, 1, 5)};
      const Shape idx_shape{pick(rng, 1, 3), pick(rng, 1, 4)};
      std::vector<EmbeddingConfig> configs(B, cfg);
      std::vector<Tensor> idx, tables, ys;
      for (std::int64_t b = 0; b < B; ++b) {
        idx.push_back(random_indices(idx_shape, cfg.num_embeddings, rng));
        tables.push_back(random_tensor({cfg.num_embeddings, cfg.embedding_dim}, rng));
        ys.push_back(embedding(idx[b], tables[b]));
      }
      const FusedEmbedding fe = fuse_embedding(configs, tables);
      const Tensor y = fused_embedding(stack_models(idx, FusedLayout::kModelLeading),
                                       fe.table.value, cfg.num_embeddings);
      worst = std::max(worst, slice_diff(y, FusedLayout::kModelLeading, ys));
    }
  }
  return worst;
}

double pool_trials(const VerifyOptions& opt, Rng rng) {
  double worst = 0.0;
  for (std::int64_t B : opt.fusion_models) {
    for (std::int64_t t = 0; t < opt.configs_per_family; ++t) {
      PoolConfig cfg;
      Shape x_shape{pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 2, 6), pick(rng, 2, 6)};
      if (rng.below(2) == 0) {
        cfg.kind = PoolKind::kMax2d;
        for (int d = 0; d < 2; ++d) {
          cfg.kernel[d] = pick(rng, 1, 2);
          cfg.stride[d] = pick(rng, 1, 2);
          cfg.padding[d] = pick(rng, 0, cfg.kernel[d] / 2);
        }
      } else {
        cfg.kind = PoolKind::kAdaptiveAvg2d;
        cfg.output_size = {pick(rng, 1, x_shape[2]), pick(rng, 1, x_shape[3])};
      }
      std::vector<Tensor> xs, ys;
      for (std::int64_t b = 0; b < B; ++b) {
        xs.push_back(random_tensor(x_shape, rng));
        ys.push_back(pool2d(xs[b], cfg));
      }
      const Tensor y = pool2d(stack_models(xs, FusedLayout::kChannelFolded), cfg);
      worst = std::max(worst, slice_diff(y, FusedLayout::kChannelFolded, ys));
    }
  }
  return worst;
}

double dropout_trials(const VerifyOptions& opt, Rng rng) {
  double worst = 0.0;
  for (std::int64_t B : opt.fusion_models) {
    for (std::int64_t t = 0; t < opt.configs_per_family; ++t) {
      const DropoutKind kind = rng.below(2) == 0 ? DropoutKind::kPlain : DropoutKind::kChannel2d;
      const double p = rng.uniform(0.0, 0.8);
      const Shape x_shape{pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 3)};
      const FusedLayout layout = kind == DropoutKind::kChannel2d || rng.below(2) == 0
                                     ? FusedLayout::kChannelFolded
                                     : FusedLayout::kModelLeading;
      std::vector<Tensor> xs, ys;
      std::vector<Rng> streams;
      for (std::int64_t b = 0; b < B; ++b) {
        xs.push_back(random_tensor(x_shape, rng));
        streams.push_back(rng.split(static_cast<std::uint64_t>(t * 100 + b)));
        ys.push_back(dropout(kind, xs[b], p, true, streams[b]));
      }
      const Tensor y = fused_dropout(kind, stack_models(xs, layout), p, true, streams, layout);
      worst = std::max(worst, slice_diff(y, layout, ys));
    }
  }
  return worst;
}

double activation_trials(const VerifyOptions& opt, Rng rng) {
  double worst = 0.0;
  const std::vector<std::function<Tensor(const Tensor&)>> acts = {
      [](const Tensor& x) { return relu(x); }, [](const Tensor& x) { return relu6(x); },
      [](const Tensor& x) { return leaky_relu(x, 0.2); }, [](const Tensor& x) { return tanh(x); }};
  for (std::int64_t B : opt.fusion_models) {
    for (std::int64_t t = 0; t < opt.configs_per_family; ++t) {
      const auto& act = acts[t % acts.size()];
      const Shape x_shape{pick(rng, 1, 3), pick(rng, 1, 4)};
      std::vector<Tensor> xs, ys;
      for (std::int64_t b = 0; b < B; ++b) {
        xs.push_back(random_tensor(x_shape, rng, false, 4.0));
        ys.push_back(act(xs[b]));
      }
      const Tensor y = act(stack_models(xs, FusedLayout::kModelLeading));
      worst = std::max(worst, slice_diff(y, FusedLayout::kModelLeading, ys));
    }
  }
  return worst;
}

// Gradients of B serial networks vs slices of the fused network's gradient.
double network_gradient_trial(const GraphSpec& spec, LossKind loss_kind, std::int64_t classes,
                              std::int64_t B, Reduction reduction, const FusePlan& plan, Rng rng) {
  std::vector<Network> serial;
  for (std::int64_t b = 0; b < B; ++b) {
    Network net = Network::initialize(spec, rng.split("init").split(static_cast<std::uint64_t>(b)), b);
    for (const NetParam& p : net.params()) {
      if (p.name == "weight" && (spec.node(p.node).kind == OpKind::kLayerNorm ||
                                 spec.node(p.node).kind == OpKind::kBatchNorm2d)) {
        for (double& v : p.param.value.mutable_data()) v = 1.0 + 0.3 * rng.normal();
      }
    }
    serial.push_back(net);
  }
  const Network fused = Network::fuse(serial, plan);
  const Shape x_shape = spec.node(spec.inputs[0]).config.at("shape").get<Shape>();
  const std::int64_t n = x_shape[0];
  std::vector<Tensor> xs, ys;
  for (std::int64_t b = 0; b < B; ++b) {
    xs.push_back(random_tensor(x_shape, rng));
    ys.push_back(random_indices({n}, classes, rng));
  }
  const RunContext ctx{true, rng.split("ctx")};
  for (std::int64_t b = 0; b < B; ++b) {
    GradTape tape;
    const std::vector<Tensor> in{xs[b]};
    tape.backward(serial_loss(loss_kind, serial[b].forward(in, ctx).front(), ys[b], reduction));
  }
  {
    GradTape tape;
    const std::vector<Tensor> in{stack_models(xs, FusedLayout::kModelLeading)};
    const Tensor preds = fused.forward(in, ctx).front();
    tape.backward(fused_loss(loss_kind, preds, stack_models(ys, FusedLayout::kModelLeading), reduction).scaled);
  }
  double worst = 0.0;
  for (std::int64_t b = 0; b < B; ++b) {
    for (const NetParam& p : serial[b].params()) {
      if (!p.trainable) continue;
      const std::string replica = p.node + "@" + std::to_string(b);
      Tensor got;
      if (fused.spec().find(replica) != nullptr) {
        got = fused.param(replica, p.name).value.grad();
      } else {
        FusedParameter g = fused.param(p.node, p.name);
        g.value = g.value.grad();
        got = g.model_slice(b, p.param.value.shape());
      }
      worst = std::max(worst, max_abs_diff(got, p.param.value.grad()));
    }
  }
  return worst;
}

struct FdCase {
  std::string name;
  std::function<Tensor(const std::vector<Tensor>&)> fn;
  std::vector<Tensor> inputs;
};

// Weighted sum so every output element contributes a distinct gradient.
Tensor weighted(const Tensor& y, std::uint64_t seed) {
  Rng rng(seed);
  const Tensor w = random_tensor(y.shape(), rng);
  return sum(mul(y, w));
}

std::vector<FdCase> fd_cases(Rng rng) {
  std::vector<FdCase> cases;
  const auto conv_case = [&](const std::string& name, ConvConfig cfg, Shape x_shape) {
    cases.push_back({name,
                     [cfg](const std::vector<Tensor>& in) {
                       return weighted(grouped_conv_forward(in[0], in[1], in[2], cfg), 11);
                     },
                     {random_tensor(x_shape, rng, true), random_tensor(cfg.weight_shape(), rng, true),
                      random_tensor(cfg.bias_shape(), rng, true)}});
  };
  conv_case("conv1d", ConvConfig{2, 4, {3}, {2}, {1}, 2, false}, {2, 2, 7});
  conv_case("conv2d", ConvConfig{4, 6, {3, 2}, {1, 2}, {1, 0}, 2, false}, {2, 4, 5, 4});
  conv_case("conv_transpose2d", ConvConfig{2, 4, {3, 3}, {2, 1}, {1, 0}, 2, true}, {1, 2, 3, 3});
  cases.push_back({"linear",
                   [](const std::vector<Tensor>& in) { return weighted(linear(in[0], in[1], in[2]), 12); },
                   {random_tensor({3, 4}, rng, true), random_tensor({4, 5}, rng, true),
                    random_tensor({5}, rng, true)}});
  cases.push_back({"baddbmm",
                   [](const std::vector<Tensor>& in) { return weighted(baddbmm(in[0], in[1], in[2]), 13); },
                   {random_tensor({2, 1, 3}, rng, true), random_tensor({2, 4, 5}, rng, true),
                    random_tensor({2, 5, 3}, rng, true)}});
  cases.push_back({"matmul",
                   [](const std::vector<Tensor>& in) { return weighted(matmul(in[0], in[1]), 14); },
                   {random_tensor({3, 4}, rng, true), random_tensor({4, 2}, rng, true)}});
  cases.push_back({"batch_norm",
                   [](const std::vector<Tensor>& in) {
                     const Tensor rm = Tensor::zeros({3}), rv = Tensor::ones({3});
                     return weighted(batch_norm(in[0], in[1], in[2], rm, rv, true, 0.1, 1e-5), 15);
                   },
                   {random_tensor({4, 3, 2, 2}, rng, true), random_tensor({3}, rng, true),
                    random_tensor({3}, rng, true)}});
  cases.push_back({"layer_norm",
                   [](const std::vector<Tensor>& in) {
                     return weighted(layer_norm_affine(in[0], in[1], in[2], LayerNormConfig{{2, 3}, 1e-5}), 16);
                   },
                   {random_tensor({3, 2, 3}, rng, true), random_tensor({2, 3}, rng, true),
                    random_tensor({2, 3}, rng, true)}});
  cases.push_back({"fused_layer_norm",
                   [](const std::vector<Tensor>& in) {
                     return weighted(fused_layer_norm(in[0], in[1], in[2], LayerNormConfig{{4}, 1e-5}), 17);
                   },
                   {random_tensor({2, 3, 4}, rng, true), random_tensor({2, 4}, rng, true),
                    random_tensor({2, 4}, rng, true)}});
  const Tensor idx = random_indices({2, 3}, 5, rng);
  cases.push_back({"embedding",
                   [idx](const std::vector<Tensor>& in) { return weighted(embedding(idx, in[0]), 18); },
                   {random_tensor({5, 3}, rng, true)}});
  cases.push_back({"max_pool2d",
                   [](const std::vector<Tensor>& in) {
                     PoolConfig cfg;
                     cfg.kernel = {2, 2};
                     cfg.stride = {1, 2};
                     return weighted(pool2d(in[0], cfg), 19);
                   },
                   {random_tensor({2, 2, 4, 4}, rng, true)}});
  cases.push_back({"adaptive_avg_pool2d",
                   [](const std::vector<Tensor>& in) {
                     PoolConfig cfg;
                     cfg.kind = PoolKind::kAdaptiveAvg2d;
                     cfg.output_size = {2, 3};
                     return weighted(pool2d(in[0], cfg), 20);
                   },
                   {random_tensor({1, 2, 5, 4}, rng, true)}});
  cases.push_back({"dropout",
                   [](const std::vector<Tensor>& in) {
                     return weighted(dropout(DropoutKind::kChannel2d, in[0], 0.4, true, Rng(3)), 21);
                   },
                   {random_tensor({2, 3, 2, 2}, rng, true)}});
  cases.push_back({"activations",
                   [](const std::vector<Tensor>& in) {
                     const Tensor a = relu(in[0]), b = relu6(scale(in[0], 3.0)),
                                  c = leaky_relu(in[0], 0.1), d = tanh(in[0]);
                     return add(add(weighted(a, 22), weighted(b, 23)), add(weighted(c, 24), weighted(d, 25)));
                   },
                   {random_tensor({3, 5}, rng, true)}});
  cases.push_back({"layout_adapt",
                   [](const std::vector<Tensor>& in) {
                     const Tensor mid = layout_adapt(in[0], FusedLayout::kChannelFolded, FusedLayout::kModelLeading, 2);
                     return weighted(layout_adapt(mid, FusedLayout::kModelLeading, FusedLayout::kModelMid, 2), 26);
                   },
                   {random_tensor({2, 4, 3}, rng, true)}});
  cases.push_back({"concat_split",
                   [](const std::vector<Tensor>& in) {
                     const std::vector<Tensor> parts{in[0], in[1]};
                     const Tensor c = concat(parts, 1);
                     const std::vector<std::int64_t> extents{1, 4};
                     const std::vector<Tensor> s = split(c, 1, extents);
                     return add(weighted(s[0], 27), weighted(s[1], 28));
                   },
                   {random_tensor({2, 2}, rng, true), random_tensor({2, 3}, rng, true)}});
  cases.push_back({"mse",
                   [](const std::vector<Tensor>& in) {
                     return serial_loss(LossKind::kMse, in[0], in[1], Reduction::kMean);
                   },
                   {random_tensor({3, 2}, rng, true), random_tensor({3, 2}, rng)}});
  const Tensor labels = random_indices({4}, 3, rng);
  cases.push_back({"cross_entropy",
                   [labels](const std::vector<Tensor>& in) {
                     return serial_loss(LossKind::kCrossEntropy, in[0], labels, Reduction::kSum);
                   },
                   {random_tensor({4, 3}, rng, true)}});
  std::vector<double> probs(6), targets(6);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    probs[i] = rng.uniform(0.1, 0.9);
    targets[i] = rng.uniform();
  }
  cases.push_back({"bce",
                   [](const std::vector<Tensor>& in) {
                     return serial_loss(LossKind::kBce, in[0], in[1], Reduction::kMean);
                   },
                   {Tensor({2, 3}, probs, true), Tensor({2, 3}, targets)}});
  const Tensor job_labels = random_indices({3, 2}, 4, rng);
  cases.push_back({"fused_loss_scaled",
                   [job_labels](const std::vector<Tensor>& in) {
                     return fused_loss(LossKind::kCrossEntropy, in[0], job_labels, Reduction::kMean).scaled;
                   },
                   {random_tensor({3, 2, 4}, rng, true)}});
  return cases;
}

double optimizer_trial(bool adam, std::int64_t B, std::int64_t steps, Rng rng) {
  // Two parameters: a channel-concatenated one and a stacked one.
  const Shape conv_like{3, 2}, linear_like{4, 3};
  std::vector<Tensor> conv_parts, lin_parts;
  std::vector<std::vector<Tensor>> serial_values(B);
  for (std::int64_t b = 0; b < B; ++b) {
    conv_parts.push_back(random_tensor(conv_like, rng));
    lin_parts.push_back(random_tensor(linear_like, rng));
    serial_values[b] = {conv_parts[b].clone(), lin_parts[b].clone()};
  }
  std::vector<FusedParameter> fused{FusedParameter::concat(conv_parts, 0), FusedParameter::stack(lin_parts)};
  // Quadratic loss 0.5 * sum((a * theta - c)^2) with fixed a, c per element.
  const auto quad_grad = [](const Tensor& theta, const Tensor& a, const Tensor& c) {
    std::vector<double> g(static_cast<std::size_t>(theta.numel()));
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = a[i] * (a[i] * theta[i] - c[i]);
    return Tensor(theta.shape(), std::move(g));
  };
  std::vector<Tensor> a_f, c_f;
  for (const FusedParameter& p : fused) {
    a_f.push_back(random_tensor(p.value.shape(), rng));
    c_f.push_back(random_tensor(p.value.shape(), rng));
  }
  const auto slice = [&](const FusedParameter& meta, const Tensor& t, std::int64_t b, const Shape& s) {
    FusedParameter view = meta;
    view.value = t;
    return view.model_slice(b, s);
  };

  std::vector<double> lrs, h1, h2, wds;
  for (std::int64_t b = 0; b < B; ++b) {
    lrs.push_back(adam ? 1e-3 * (1.0 + b) : 0.5 + 0.25 * b);
    h1.push_back(adam ? 0.85 + 0.03 * b : 0.8 + 0.05 * b);
    h2.push_back(0.99 + 0.002 * b);
    wds.push_back(1e-3 * b);
  }
  const auto make_adam = [&](std::int64_t first, std::int64_t count) {
    return AdamHyper{HyperVector{"lr", {lrs.begin() + first, lrs.begin() + first + count}},
                     HyperVector{"beta1", {h1.begin() + first, h1.begin() + first + count}},
                     HyperVector{"beta2", {h2.begin() + first, h2.begin() + first + count}},
                     HyperVector{"weight_decay", {wds.begin() + first, wds.begin() + first + count}}};
  };
  const auto make_adadelta = [&](std::int64_t first, std::int64_t count) {
    return AdadeltaHyper{HyperVector{"lr", {lrs.begin() + first, lrs.begin() + first + count}},
                         HyperVector{"rho", {h1.begin() + first, h1.begin() + first + count}},
                         HyperVector{"weight_decay", {wds.begin() + first, wds.begin() + first + count}}};
  };

  OptState fused_state;
  std::vector<OptState> serial_states(B);
  std::vector<std::vector<FusedParameter>> serial_params(B);
  for (std::int64_t b = 0; b < B; ++b) {
    for (const Tensor& v : serial_values[b]) serial_params[b].push_back(FusedParameter::serial(v));
  }
  double worst = 0.0;
  for (std::int64_t t = 0; t < steps; ++t) {
    std::vector<Tensor> grads;
    for (std::size_t i = 0; i < fused.size(); ++i) grads.push_back(quad_grad(fused[i].value, a_f[i], c_f[i]));
    if (adam) {
      fused_adam_step(fused, grads, fused_state, make_adam(0, B));
    } else {
      fused_adadelta_step(fused, grads, fused_state, make_adadelta(0, B));
    }
    for (std::int64_t b = 0; b < B; ++b) {
      std::vector<Tensor> sgrads;
      for (std::size_t i = 0; i < fused.size(); ++i) {
        const Shape& s = serial_params[b][i].value.shape();
        sgrads.push_back(quad_grad(serial_params[b][i].value, slice(fused[i], a_f[i], b, s),
                                   slice(fused[i], c_f[i], b, s)));
      }
      if (adam) {
        fused_adam_step(serial_params[b], sgrads, serial_states[b], make_adam(b, 1));
      } else {
        fused_adadelta_step(serial_params[b], sgrads, serial_states[b], make_adadelta(b, 1));
      }
      for (std::size_t i = 0; i < fused.size(); ++i) {
        worst = std::max(worst, max_abs_diff(fused[i].model_slice(b, serial_params[b][i].value.shape()),
                                             serial_params[b][i].value));
      }
    }
  }
  return worst;
}

}  // namespace

std::vector<std::string> verify_suite_names() {
  return {"fusion", "gradients", "optimizers", "convergence"};
}

std::vector<CheckResult> verify_fusion(const VerifyOptions& opt) {
  const Rng rng = Rng(opt.seed).split("verify-fusion");
  const auto family = [&](const std::string& name, const std::function<double()>& fn) {
    return run_family("fusion", name, kFusionTol, fn);
  };
  return {
      family("conv", [&] {
        return std::max({conv_trials(opt, rng.split("conv1d"), 0), conv_trials(opt, rng.split("conv2d"), 1),
                         conv_trials(opt, rng.split("convT"), 2)});
      }),
      family("linear", [&] { return linear_trials(opt, rng.split("linear")); }),
      family("batch_norm", [&] { return batch_norm_trials(opt, rng.split("bn")); }),
      family("layer_norm", [&] { return layer_norm_trials(opt, rng.split("ln")); }),
      family("embedding", [&] { return embedding_trials(opt, rng.split("embedding")); }),
      family("pooling", [&] { return pool_trials(opt, rng.split("pool")); }),
      family("dropout", [&] { return dropout_trials(opt, rng.split("dropout")); }),
      family("activation", [&] { return activation_trials(opt, rng.split("act")); }),
  };
}

std::vector<CheckResult> verify_gradients(const VerifyOptions& opt) {
  const Rng rng = Rng(opt.seed).split("verify-gradients");
  std::vector<CheckResult> out;
  const GraphSpec spec = blocks4_graph(4);
  for (Reduction red : {Reduction::kMean, Reduction::kSum}) {
    const std::string name = red == Reduction::kMean ? "reconstruction/mean" : "reconstruction/sum";
    out.push_back(run_family("gradients", name, kGradTol, [&] {
      double worst = 0.0;
      for (std::int64_t B : opt.gradient_models) {
        for (std::uint64_t mask : {std::uint64_t{0xF}, std::uint64_t{0x5}}) {
          worst = std::max(worst, network_gradient_trial(spec, LossKind::kCrossEntropy, 3, B, red,
                                                         FusePlan::from_mask(spec, mask),
                                                         rng.split(static_cast<std::uint64_t>(B * 16 + mask))));
        }
      }
      return worst;
    }));
  }
  for (const FdCase& c : fd_cases(rng.split("fd"))) {
    out.push_back(run_family("gradients", "fd/" + c.name, kFdTol,
                             [&] { return gradient_check(c.fn, c.inputs).max_rel_error; }));
  }
  return out;
}

std::vector<CheckResult> verify_optimizers(const VerifyOptions& opt) {
  const Rng rng = Rng(opt.seed).split("verify-optimizers");
  std::vector<CheckResult> out;
  for (bool adam : {true, false}) {
    out.push_back(run_family("optimizers", adam ? "adam" : "adadelta", kOptimTol, [&] {
      double worst = 0.0;
      for (std::int64_t B : opt.optimizer_models) {
        worst = std::max(worst, optimizer_trial(adam, B, opt.optimizer_steps,
                                                rng.split(adam ? "adam" : "adadelta").split(static_cast<std::uint64_t>(B))));
      }
      return worst;
    }));
  }
  out.push_back(run_family("optimizers", "steplr", 0.0, [&] {
    Rng r = rng.split("steplr");
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
      const std::int64_t B = pick(r, 1, 4);
      HyperVector lr0{"lr", {}}, gamma{"gamma", {}};
      std::vector<std::int64_t> periods;
      for (std::int64_t b = 0; b < B; ++b) {
        lr0.values.push_back(r.uniform(1e-4, 1e-1));
        gamma.values.push_back(r.uniform(0.1, 1.0));
        periods.push_back(pick(r, 1, 12));
      }
      const std::int64_t epoch = pick(r, 0, 60);
      const HyperVector got = fused_steplr(lr0, epoch, periods, gamma);
      for (std::int64_t b = 0; b < B; ++b) {
        const double expect = lr0.values[b] * std::pow(gamma.values[b], static_cast<double>(epoch / periods[b]));
        worst = std::max(worst, std::abs(got.values[b] - expect));
      }
    }
    return worst;
  }));
  return out;
}

ConvergenceTrace convergence_trace(const VerifyOptions& opt) {
  ZooEntry entry = zoo_entry("minicnn");
  const Rng rng = Rng(opt.seed).split("convergence");
  const auto B = static_cast<std::int64_t>(opt.convergence_lrs.size());
  std::vector<Network> serial;
  for (std::int64_t b = 0; b < B; ++b) {
    serial.push_back(Network::initialize(entry.spec, rng.split("init").split(static_cast<std::uint64_t>(b)), b));
  }
  Network fused = Network::fuse(serial, FusePlan::full());
  ConvergenceTrace trace;
  trace.lrs = opt.convergence_lrs;
  trace.serial.assign(B, {});
  trace.fused.assign(B, {});
  std::vector<Trainer> serial_trainers;
  for (std::int64_t b = 0; b < B; ++b) {
    const std::vector<double> lr{opt.convergence_lrs[b]};
    serial_trainers.emplace_back(serial[b], FusedOptimizer(serial[b].parameters(), adam_hyper(lr)), entry.loss);
  }
  Trainer fused_trainer(fused, FusedOptimizer(fused.parameters(), adam_hyper(opt.convergence_lrs)), entry.loss);
  for (std::int64_t it = 0; it < opt.convergence_iterations; ++it) {
    const Batch batch = synthetic_batch(entry, rng.split("data").split(static_cast<std::uint64_t>(it)));
    const RunContext ctx{true, rng.split("step").split(static_cast<std::uint64_t>(it))};
    const std::vector<Tensor> fused_in{replicate(batch.x, B, FusedLayout::kModelLeading)};
    const std::vector<double> fl = fused_trainer.step(fused_in, batch.y, ctx);
    const std::vector<Tensor> serial_in{batch.x};
    for (std::int64_t b = 0; b < B; ++b) {
      trace.serial[b].push_back(serial_trainers[b].step(serial_in, batch.y, ctx).front());
      trace.fused[b].push_back(fl[b]);
    }
  }
  return trace;
}

std::vector<CheckResult> verify_convergence(const VerifyOptions& opt) {
  ConvergenceTrace trace;
  CheckResult r = run_family("convergence", "minicnn", kConvergenceTol, [&] {
    trace = convergence_trace(opt);
    double worst = 0.0;
    for (std::size_t b = 0; b < trace.serial.size(); ++b)
      for (std::size_t i = 0; i < trace.serial[b].size(); ++i)
        worst = std::max(worst, std::abs(trace.serial[b][i] - trace.fused[b][i]));
    return worst;
  });
  if (r.detail.empty()) {
    for (std::size_t b = 0; b < trace.serial.size(); ++b) {
      const auto& s = trace.serial[b];
      const std::size_t tail = std::min<std::size_t>(10, s.size());
      double first = 0.0, last = 0.0;
      for (std::size_t i = 0; i < tail; ++i) {
        first += s[i] / static_cast<double>(tail);
        last += s[s.size() - tail + i] / static_cast<double>(tail);
      }
      char buf[128];
      std::snprintf(buf, sizeof buf, "%slr=%g loss %.4f -> %.4f", b ? "; " : "", trace.lrs[b], first, last);
      r.detail += buf;
    }
  }
  return {r};
}

std::vector<CheckResult> run_verify(const VerifyOptions& opt) {
  const std::vector<std::string> known = verify_suite_names();
  for (const std::string& s : opt.suites) {
    if (std::find(known.begin(), known.end(), s) == known.end()) {
      throw ConfigError("unknown verification suite '" + s + "'");
    }
  }
  const auto wanted = [&](const std::string& s) {
    return opt.suites.empty() || std::find(opt.suites.begin(), opt.suites.end(), s) != opt.suites.end();
  };
  std::vector<CheckResult> out;
  const auto append = [&](std::vector<CheckResult> part) { out.insert(out.end(), part.begin(), part.end()); };
  if (wanted("fusion")) append(verify_fusion(opt));
  if (wanted("gradients")) append(verify_gradients(opt));
  if (wanted("optimizers")) append(verify_optimizers(opt));
  if (wanted("convergence")) append(verify_convergence(opt));
  return out;
}

}  // namespace hfta
