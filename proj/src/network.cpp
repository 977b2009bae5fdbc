#include "hfta/network.h"

#include <cmath>
#include <map>

#include "hfta/dropout.h"
#include "hfta/errors.h"
#include "hfta/layout.h"
#include "hfta/linear.h"
#include "hfta/node_config.h"
#include "hfta/tensor_ops.h"

namespace hfta {
namespace {

std::string base_id(const Node& node) {
  if (!node_replica(node)) return node.id;
  return node.id.substr(0, node.id.rfind('@'));
}

Tensor init_param(const Node& node, const ParamSpec& ps, Rng rng) {
  std::vector<double> data(static_cast<std::size_t>(numel(ps.shape)));
  const auto uniform_fill = [&](double bound) {
    for (double& v : data) v = rng.uniform(-bound, bound);
  };
  switch (node.kind) {
    case OpKind::kConv1d:
    case OpKind::kConv2d:
    case OpKind::kConvTranspose2d: {
      const Shape w = conv_config(node).weight_shape();
      double fan_in = 1.0;
      for (std::size_t d = 1; d < w.size(); ++d) fan_in *= static_cast<double>(w[d]);
      uniform_fill(1.0 / std::sqrt(fan_in));
      break;
    }
    case OpKind::kLinear:
      uniform_fill(1.0 / std::sqrt(static_cast<double>(linear_config(node).in_features)));
      break;
    case OpKind::kEmbedding:
      for (double& v : data) v = rng.normal();
      break;
    default:
      std::fill(data.begin(), data.end(),
                ps.name == "weight" || ps.name == "running_var" ? 1.0 : 0.0);
  }
  return Tensor(ps.shape, std::move(data), ps.trainable);
}

FusedParameter fused_param_for(const Node& node, std::string_view name,
                               std::span<const Network> models, const std::string& id) {
  std::vector<Tensor> values;
  for (const Network& m : models) values.push_back(m.param(id, name).value);
  switch (node.kind) {
    case OpKind::kLinear: {
      std::vector<Tensor> weights, biases;
      for (const Network& m : models) {
        weights.push_back(m.param(id, "weight").value);
        biases.push_back(m.param(id, "bias").value);
      }
      FusedLinear fl = fuse_linear(weights, biases);
      return name == "weight" ? fl.weight : fl.bias;
    }
    case OpKind::kConv1d:
    case OpKind::kConv2d:
    case OpKind::kConvTranspose2d: {
      std::vector<ConvConfig> configs;
      std::vector<Tensor> weights, biases;
      for (const Network& m : models) {
        configs.push_back(conv_config(m.spec().node(id)));
        weights.push_back(m.param(id, "weight").value);
        biases.push_back(m.param(id, "bias").value);
      }
      FusedConv fc = fuse_conv_family(configs, weights, biases);
      return name == "weight" ? fc.weight : fc.bias;
    }
    case OpKind::kBatchNorm1d:
    case OpKind::kBatchNorm2d: {
      std::vector<BatchNormConfig> configs;
      std::vector<BatchNormState> states;
      for (const Network& m : models) {
        configs.push_back(batch_norm_config(m.spec().node(id)));
        states.push_back({m.param(id, "weight").value, m.param(id, "bias").value,
                          m.param(id, "running_mean").value, m.param(id, "running_var").value});
      }
      FusedBatchNorm fb = fuse_batchnorm(configs, states);
      if (name == "weight") return fb.weight;
      if (name == "bias") return fb.bias;
      return name == "running_mean" ? fb.running_mean : fb.running_var;
    }
    case OpKind::kLayerNorm: {
      std::vector<LayerNormConfig> configs;
      std::vector<Tensor> weights, biases;
      for (const Network& m : models) {
        configs.push_back(layer_norm_config(m.spec().node(id)));
        weights.push_back(m.param(id, "weight").value);
        biases.push_back(m.param(id, "bias").value);
      }
      FusedLayerNorm fl = fuse_layernorm(configs, weights, biases);
      return name == "weight" ? fl.weight : fl.bias;
    }
    case OpKind::kEmbedding: {
      std::vector<EmbeddingConfig> configs;
      for (const Network& m : models) configs.push_back(embedding_config(m.spec().node(id)));
      return fuse_embedding(configs, values).table;
    }
    default:
      throw FusionError("node '" + id + "' has no fusible parameters");
  }
}

Shape shape_of_input(const Node& node) {
  return node.config.at("shape").get<Shape>();
}

Tensor activation(const Node& node, const Tensor& x) {
  switch (node.kind) {
    case OpKind::kReLU: return relu(x);
    case OpKind::kReLU6: return relu6(x);
    case OpKind::kLeakyReLU: return leaky_relu(x, negative_slope(node));
    case OpKind::kTanh: return tanh(x);
    default: throw ContractError("not an activation");
  }
}

}  // namespace

Network Network::initialize(const GraphSpec& spec, const Rng& rng, std::int64_t model_key) {
  validate_graph(spec);
  infer_shapes(spec);
  Network net;
  net.spec_ = spec;
  net.source_ = spec;
  net.model_keys_ = {model_key};
  for (const Node& node : spec.nodes) {
    if (is_fused_node(node) || node_replica(node)) {
      throw ContractError("initialize expects a serial graph; node '" + node.id + "' is fused");
    }
    for (const ParamSpec& ps : parameter_specs(node)) {
      Tensor value = init_param(node, ps, rng.split(node.id).split(ps.name));
      FusedParameter p = FusedParameter::serial(std::move(value), model_key);
      p.first_model = 0;
      net.params_.push_back({node.id, ps.name, std::move(p), ps.trainable});
    }
  }
  return net;
}

Network Network::fuse(std::span<const Network> models, const FusePlan& plan) {
  if (models.empty()) throw FusionError("cannot fuse zero networks");
  std::vector<GraphSpec> specs;
  for (const Network& m : models) {
    if (m.fused()) throw ContractError("fuse expects serial networks");
    specs.push_back(m.spec());
  }
  Network net;
  net.spec_ = fuse_graphs(specs, plan);
  net.source_ = specs.front();
  net.fused_ = true;
  for (const Network& m : models) net.model_keys_.push_back(m.model_key(0));
  for (const Node& node : net.spec_.nodes) {
    for (const ParamSpec& ps : parameter_specs(node)) {
      if (const std::optional<std::int64_t> b = node_replica(node)) {
        FusedParameter p =
            FusedParameter::serial(models[*b].param(base_id(node), ps.name).value.clone(), *b);
        p.value.set_requires_grad(ps.trainable);
        net.params_.push_back({node.id, ps.name, std::move(p), ps.trainable});
      } else {
        FusedParameter p = fused_param_for(node, ps.name, models, node.id);
        p.value.set_requires_grad(ps.trainable);
        if (p.value.shape() != ps.shape) {
          throw FusionError("fused parameter " + node.id + "." + ps.name + " is " +
                            to_string(p.value.shape()) + ", graph expects " + to_string(ps.shape));
        }
        net.params_.push_back({node.id, ps.name, std::move(p), ps.trainable});
      }
    }
  }
  return net;
}

const FusedParameter& Network::param(std::string_view node, std::string_view name) const {
  for (const NetParam& p : params_) {
    if (p.node == node && p.name == name) return p.param;
  }
  throw ContractError("no parameter " + std::string(node) + "." + std::string(name));
}

FusedParameter& Network::param(std::string_view node, std::string_view name) {
  return const_cast<FusedParameter&>(std::as_const(*this).param(node, name));
}

std::vector<FusedParameter> Network::parameters() const {
  std::vector<FusedParameter> out;
  for (const NetParam& p : params_) {
    if (p.trainable) out.push_back(p.param);
  }
  return out;
}

Network Network::clone() const {
  Network copy = *this;
  for (NetParam& p : copy.params_) {
    const bool grad = p.param.value.requires_grad();
    p.param.value = p.param.value.clone();
    p.param.value.set_requires_grad(grad);
  }
  return copy;
}

Network Network::extract(std::int64_t b) const {
  if (b < 0 || b >= model_count()) throw RangeError("model index out of range");
  if (!fused_) return clone();
  Network net;
  net.spec_ = source_;
  net.source_ = source_;
  net.model_keys_ = {model_keys_[b]};
  for (const Node& node : source_.nodes) {
    const std::string replica = node.id + "@" + std::to_string(b);
    const bool replicated = spec_.find(replica) != nullptr;
    for (const ParamSpec& ps : parameter_specs(node)) {
      Tensor value = replicated ? param(replica, ps.name).value.clone()
                                : param(node.id, ps.name).model_slice(b, ps.shape);
      value.set_requires_grad(ps.trainable);
      net.params_.push_back({node.id, ps.name, FusedParameter::serial(std::move(value)), ps.trainable});
    }
  }
  return net;
}

std::vector<Tensor> Network::forward(std::span<const Tensor> inputs, const RunContext& ctx) const {
  if (inputs.size() != spec_.inputs.size()) {
    throw ContractError("graph '" + spec_.name + "' takes " + std::to_string(spec_.inputs.size()) +
                        " inputs, got " + std::to_string(inputs.size()));
  }
  const std::int64_t B = model_count();
  std::map<std::string, Tensor> values;
  for (std::size_t i = 0; i < inputs.size(); ++i) values[spec_.inputs[i]] = inputs[i];

  const auto pv = [&](const std::string& node, const char* name) {
    return param(node, name).value;
  };
  const auto dropout_rng = [&](std::int64_t b, const std::string& node) {
    return ctx.rng.split("dropout").split(static_cast<std::uint64_t>(model_keys_.at(b))).split(node);
  };

  for (const std::string& id : topological_order(spec_)) {
    const Node& node = spec_.node(id);
    const bool fused_node = fused_ && is_fused_node(node);
    const std::optional<std::int64_t> replica = node_replica(node);
    std::vector<Tensor> in;
    for (const std::string& src : node.inputs) {
      const Node& producer = spec_.node(src);
      Tensor t = values.at(src);
      if (replica && is_fused_node(producer)) {
        t = extract_model(t, node_layout(producer), node_models(producer), *replica);
      }
      in.push_back(std::move(t));
    }

    Tensor out;
    switch (node.kind) {
      case OpKind::kInput: {
        const Tensor& x = values.at(id);
        const Shape serial = shape_of_input(node);
        if (fused_node) {
          const Shape expected = fused_shape(serial, FusedLayout::kModelLeading, B);
          if (x.shape() != expected) {
            throw DimensionError("input '" + id + "' expects " + to_string(expected) + ", got " +
                                 to_string(x.shape()));
          }
          const FusedLayout layout = node_layout(node);
          out = layout == FusedLayout::kModelLeading
                    ? x
                    : layout_adapt(x, FusedLayout::kModelLeading, layout, B);
        } else {
          if (x.shape() != serial) {
            throw DimensionError("input '" + id + "' expects " + to_string(serial) + ", got " +
                                 to_string(x.shape()));
          }
          out = x;
        }
        break;
      }
      case OpKind::kConv1d:
      case OpKind::kConv2d:
      case OpKind::kConvTranspose2d:
        out = grouped_conv_forward(in[0], pv(id, "weight"), pv(id, "bias"), conv_config(node));
        break;
      case OpKind::kLinear:
        out = fused_node ? fused_linear(in[0], pv(id, "weight"), pv(id, "bias"))
                         : linear(in[0], pv(id, "weight"), pv(id, "bias"));
        break;
      case OpKind::kBatchNorm1d:
      case OpKind::kBatchNorm2d: {
        const BatchNormConfig cfg = batch_norm_config(node);
        out = batch_norm(in[0], pv(id, "weight"), pv(id, "bias"), pv(id, "running_mean"),
                         pv(id, "running_var"), ctx.training, cfg.momentum, cfg.eps);
        break;
      }
      case OpKind::kLayerNorm:
        out = fused_node ? fused_layer_norm(in[0], pv(id, "weight"), pv(id, "bias"),
                                            layer_norm_config(node))
                         : layer_norm_affine(in[0], pv(id, "weight"), pv(id, "bias"),
                                             layer_norm_config(node));
        break;
      case OpKind::kEmbedding:
        out = fused_node ? fused_embedding(in[0], pv(id, "table"),
                                           embedding_config(node).num_embeddings / B)
                         : embedding(in[0], pv(id, "table"));
        break;
      case OpKind::kMaxPool2d:
      case OpKind::kAdaptiveAvgPool2d:
        out = pool2d(in[0], pool_config(node));
        break;
      case OpKind::kDropout:
      case OpKind::kDropout2d: {
        const DropoutKind kind =
            node.kind == OpKind::kDropout ? DropoutKind::kPlain : DropoutKind::kChannel2d;
        const double p = dropout_p(node);
        if (fused_node) {
          std::vector<Rng> streams;
          for (std::int64_t b = 0; b < B; ++b) streams.push_back(dropout_rng(b, id));
          out = fused_dropout(kind, in[0], p, ctx.training, streams, node_layout(node));
        } else {
          out = dropout(kind, in[0], p, ctx.training, dropout_rng(replica.value_or(0), base_id(node)));
        }
        break;
      }
      case OpKind::kReLU:
      case OpKind::kReLU6:
      case OpKind::kLeakyReLU:
      case OpKind::kTanh:
        out = activation(node, in[0]);
        break;
      case OpKind::kFlatten: {
        const Shape& s = in[0].shape();
        if (!fused_node) {
          out = reshape(in[0], {s[0], in[0].numel() / s[0]});
        } else if (node_layout(spec_.node(node.inputs[0])) == FusedLayout::kModelLeading) {
          out = reshape(in[0], {s[0], s[1], in[0].numel() / (s[0] * s[1])});
        } else {
          out = reshape(in[0], {s[0], B, in[0].numel() / (s[0] * B)});
        }
        break;
      }
      case OpKind::kLayoutAdapt:
        out = layout_adapt(in[0], parse_layout(node.config.at("from").get<std::string>()),
                           parse_layout(node.config.at("to").get<std::string>()),
                           config_int(node.config, "models"));
        break;
      case OpKind::kConcatModels:
        out = stack_models(in, node_layout(node));
        break;
    }
    values[id] = std::move(out);
  }

  std::vector<Tensor> outputs;
  for (const std::string& id : spec_.outputs) outputs.push_back(values.at(id));
  return outputs;
}

}  // namespace hfta
