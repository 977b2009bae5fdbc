#include "hfta/node_config.h"

#include "hfta/errors.h"

namespace hfta {
namespace {

using nlohmann::json;

void expect_kind(const Node& node, std::initializer_list<OpKind> kinds, std::string_view what) {
  for (OpKind k : kinds) {
    if (node.kind == k) return;
  }
  throw ConfigError("node '" + node.id + "' is not a " + std::string(what));
}

json ints_json(const std::vector<std::int64_t>& v) { return json(v); }

}  // namespace

ConvConfig conv_config(const Node& node) {
  expect_kind(node, {OpKind::kConv1d, OpKind::kConv2d, OpKind::kConvTranspose2d}, "convolution");
  const std::size_t dims = node.kind == OpKind::kConv1d ? 1 : 2;
  ConvConfig cfg;
  cfg.in_channels = config_int(node.config, "in_channels");
  cfg.out_channels = config_int(node.config, "out_channels");
  cfg.kernel = config_ints(node.config, "kernel_size", dims);
  cfg.stride = node.config.contains("stride") ? config_ints(node.config, "stride", dims)
                                              : std::vector<std::int64_t>(dims, 1);
  cfg.padding = node.config.contains("padding") ? config_ints(node.config, "padding", dims)
                                                : std::vector<std::int64_t>(dims, 0);
  cfg.groups = node.config.contains("groups") ? config_int(node.config, "groups") : 1;
  cfg.transposed = node.kind == OpKind::kConvTranspose2d;
  cfg.validate();
  return cfg;
}

BatchNormConfig batch_norm_config(const Node& node) {
  expect_kind(node, {OpKind::kBatchNorm1d, OpKind::kBatchNorm2d}, "batch norm");
  BatchNormConfig cfg;
  cfg.num_features = config_int(node.config, "num_features");
  cfg.eps = config_real(node.config, "eps", cfg.eps);
  cfg.momentum = config_real(node.config, "momentum", cfg.momentum);
  if (cfg.num_features < 1 || cfg.eps <= 0.0) {
    throw ConfigError("node '" + node.id + "': bad batch norm config");
  }
  return cfg;
}

LayerNormConfig layer_norm_config(const Node& node) {
  expect_kind(node, {OpKind::kLayerNorm}, "layer norm");
  LayerNormConfig cfg;
  const json& ns = node.config.at("normalized_shape");
  if (ns.is_number_integer()) {
    cfg.normalized_shape = {ns.get<std::int64_t>()};
  } else {
    cfg.normalized_shape = config_ints(node.config, "normalized_shape", ns.size());
  }
  for (std::int64_t e : cfg.normalized_shape) {
    if (e < 1) throw ConfigError("node '" + node.id + "': normalized_shape must be positive");
  }
  cfg.eps = config_real(node.config, "eps", cfg.eps);
  return cfg;
}

EmbeddingConfig embedding_config(const Node& node) {
  expect_kind(node, {OpKind::kEmbedding}, "embedding");
  EmbeddingConfig cfg{config_int(node.config, "num_embeddings"),
                      config_int(node.config, "embedding_dim")};
  if (cfg.num_embeddings < 1 || cfg.embedding_dim < 1) {
    throw ConfigError("node '" + node.id + "': embedding extents must be positive");
  }
  return cfg;
}

PoolConfig pool_config(const Node& node) {
  expect_kind(node, {OpKind::kMaxPool2d, OpKind::kAdaptiveAvgPool2d}, "pooling layer");
  PoolConfig cfg;
  if (node.kind == OpKind::kMaxPool2d) {
    cfg.kind = PoolKind::kMax2d;
    cfg.kernel = config_ints(node.config, "kernel_size", 2);
    cfg.stride = node.config.contains("stride") ? config_ints(node.config, "stride", 2) : cfg.kernel;
    cfg.padding = node.config.contains("padding") ? config_ints(node.config, "padding", 2)
                                                  : std::vector<std::int64_t>{0, 0};
  } else {
    cfg.kind = PoolKind::kAdaptiveAvg2d;
    cfg.output_size = config_ints(node.config, "output_size", 2);
  }
  return cfg;
}

LinearConfig linear_config(const Node& node) {
  expect_kind(node, {OpKind::kLinear}, "linear layer");
  LinearConfig cfg{config_int(node.config, "in_features"), config_int(node.config, "out_features")};
  if (cfg.in_features < 1 || cfg.out_features < 1) {
    throw ConfigError("node '" + node.id + "': Linear extents must be positive");
  }
  return cfg;
}

double dropout_p(const Node& node) {
  expect_kind(node, {OpKind::kDropout, OpKind::kDropout2d}, "dropout layer");
  const double p = config_real(node.config, "p", 0.5);
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("node '" + node.id + "': dropout p must lie in [0, 1)");
  return p;
}

double negative_slope(const Node& node) { return config_real(node.config, "negative_slope", 0.01); }

json conv_to_json(const ConvConfig& cfg) {
  return {{"in_channels", cfg.in_channels}, {"out_channels", cfg.out_channels},
          {"kernel_size", ints_json(cfg.kernel)}, {"stride", ints_json(cfg.stride)},
          {"padding", ints_json(cfg.padding)},   {"groups", cfg.groups}};
}

json batch_norm_to_json(const BatchNormConfig& cfg) {
  return {{"num_features", cfg.num_features}, {"eps", cfg.eps}, {"momentum", cfg.momentum}};
}

json layer_norm_to_json(const LayerNormConfig& cfg) {
  return {{"normalized_shape", cfg.normalized_shape}, {"eps", cfg.eps}};
}

json embedding_to_json(const EmbeddingConfig& cfg) {
  return {{"num_embeddings", cfg.num_embeddings}, {"embedding_dim", cfg.embedding_dim}};
}

}  // namespace hfta
