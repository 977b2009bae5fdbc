#pragma once

#include <cstdint>

#include "hfta/conv.h"
#include "hfta/embedding.h"
#include "hfta/graph.h"
#include "hfta/norm.h"
#include "hfta/pool.h"

namespace hfta {

// Typed views of a node's config, in the node's own (serial or fused) form.
ConvConfig conv_config(const Node& node);
BatchNormConfig batch_norm_config(const Node& node);
LayerNormConfig layer_norm_config(const Node& node);
EmbeddingConfig embedding_config(const Node& node);
PoolConfig pool_config(const Node& node);

struct LinearConfig {
  std::int64_t in_features = 1;
  std::int64_t out_features = 1;
};
LinearConfig linear_config(const Node& node);

double dropout_p(const Node& node);
double negative_slope(const Node& node);

// Writes the typed configs back as node config entries.
nlohmann::json conv_to_json(const ConvConfig& cfg);
nlohmann::json batch_norm_to_json(const BatchNormConfig& cfg);
nlohmann::json layer_norm_to_json(const LayerNormConfig& cfg);
nlohmann::json embedding_to_json(const EmbeddingConfig& cfg);

}  // namespace hfta
