#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "hfta/layout.h"
#include "hfta/tensor.h"

namespace hfta {

enum class OpKind {
  kInput,
  kConv1d,
  kConv2d,
  kConvTranspose2d,
  kLinear,
  kBatchNorm1d,
  kBatchNorm2d,
  kLayerNorm,
  kEmbedding,
  kMaxPool2d,
  kAdaptiveAvgPool2d,
  kDropout,
  kDropout2d,
  kReLU,
  kReLU6,
  kLeakyReLU,
  kTanh,
  kFlatten,
  kLayoutAdapt,
  kConcatModels,
};

std::string_view op_kind_name(OpKind kind);
std::optional<OpKind> parse_op_kind(std::string_view name);

// Node config keys by kind (a fused node adds "models" and "layout", its
// output layout; a replicated copy adds "replica"):
//   Input            shape, dtype ("real" | "index")
//   Conv1d/Conv2d    in_channels, out_channels, kernel_size, stride, padding, groups
//   ConvTranspose2d  same as Conv2d
//   Linear           in_features, out_features
//   BatchNorm1d/2d   num_features, eps, momentum
//   LayerNorm        normalized_shape, eps
//   Embedding        num_embeddings, embedding_dim
//   MaxPool2d        kernel_size, stride, padding
//   AdaptiveAvgPool2d output_size
//   Dropout/2d       p
//   LeakyReLU        negative_slope
//   LayoutAdapt      from, to, models
//   ConcatModels     models, layout (one input per model)
struct Node {
  std::string id;
  OpKind kind = OpKind::kInput;
  nlohmann::json config = nlohmann::json::object();
  std::vector<std::string> inputs;
  bool operator==(const Node&) const = default;
};

struct Block {
  std::string name;
  std::vector<std::string> nodes;
  bool operator==(const Block&) const = default;
};

struct GraphSpec {
  std::string name;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::vector<Block> blocks;
  std::vector<Node> nodes;

  const Node& node(std::string_view id) const;
  const Node* find(std::string_view id) const;
  // Block holding `id`, or empty when the node is unlabelled.
  std::string block_of(std::string_view id) const;
  // Ids of nodes reading `id`, in node order.
  std::vector<std::string> consumers(std::string_view id) const;
  bool operator==(const GraphSpec&) const = default;
};

// Throws SchemaError for malformed documents, unknown keys and unknown
// kinds (naming the node), ValidationError for dangling ids or cycles.
GraphSpec load_graph(std::string_view json);
GraphSpec graph_from_json(const nlohmann::json& doc);
nlohmann::json graph_to_json(const GraphSpec& spec);
std::string save_graph(const GraphSpec& spec);

// Reference, uniqueness and acyclicity checks.
void validate_graph(const GraphSpec& spec);
// Node ids in a topological order that respects the listed order.
std::vector<std::string> topological_order(const GraphSpec& spec);

// Output shape of every node; throws on the first node that cannot be
// inferred.
std::map<std::string, Shape> infer_shapes(const GraphSpec& spec);

struct ParamSpec {
  std::string name;
  Shape shape;
  bool trainable = true;
};

// Parameters and buffers a node owns, with the shapes of this node's form
// (fused shapes for fused nodes).
std::vector<ParamSpec> parameter_specs(const Node& node);

// Fusion metadata stored in a node config.
std::int64_t node_models(const Node& node);  // 1 unless fused
bool is_fused_node(const Node& node);
std::optional<std::int64_t> node_replica(const Node& node);
FusedLayout node_layout(const Node& node);  // output layout of a fused node

// Integer or integer list config value expanded to `dims` entries.
std::vector<std::int64_t> config_ints(const nlohmann::json& config, std::string_view key,
                                      std::size_t dims);
std::int64_t config_int(const nlohmann::json& config, std::string_view key);
double config_real(const nlohmann::json& config, std::string_view key, double fallback);

}  // namespace hfta
