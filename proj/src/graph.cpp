#include "hfta/graph.h"

#include <algorithm>
#include <array>
#include <queue>
#include <set>
#include <utility>

#include "hfta/errors.h"
#include "hfta/node_config.h"

namespace hfta {
namespace {

using nlohmann::json;

struct KindInfo {
  OpKind kind;
  std::string_view name;
  std::vector<std::string_view> required;
  std::vector<std::string_view> optional;
};

const std::vector<KindInfo>& kind_table() {
  static const std::vector<KindInfo> table = {
      {OpKind::kInput, "Input", {"shape"}, {"dtype"}},
      {OpKind::kConv1d, "Conv1d", {"in_channels", "out_channels", "kernel_size"},
       {"stride", "padding", "groups"}},
      {OpKind::kConv2d, "Conv2d", {"in_channels", "out_channels", "kernel_size"},
       {"stride", "padding", "groups"}},
      {OpKind::kConvTranspose2d, "ConvTranspose2d", {"in_channels", "out_channels", "kernel_size"},
       {"stride", "padding", "groups"}},
      {OpKind::kLinear, "Linear", {"in_features", "out_features"}, {}},
      {OpKind::kBatchNorm1d, "BatchNorm1d", {"num_features"}, {"eps", "momentum"}},
      {OpKind::kBatchNorm2d, "BatchNorm2d", {"num_features"}, {"eps", "momentum"}},
      {OpKind::kLayerNorm, "LayerNorm", {"normalized_shape"}, {"eps"}},
      {OpKind::kEmbedding, "Embedding", {"num_embeddings", "embedding_dim"}, {}},
      {OpKind::kMaxPool2d, "MaxPool2d", {"kernel_size"}, {"stride", "padding"}},
      {OpKind::kAdaptiveAvgPool2d, "AdaptiveAvgPool2d", {"output_size"}, {}},
      {OpKind::kDropout, "Dropout", {"p"}, {}},
      {OpKind::kDropout2d, "Dropout2d", {"p"}, {}},
      {OpKind::kReLU, "ReLU", {}, {}},
      {OpKind::kReLU6, "ReLU6", {}, {}},
      {OpKind::kLeakyReLU, "LeakyReLU", {}, {"negative_slope"}},
      {OpKind::kTanh, "Tanh", {}, {}},
      {OpKind::kFlatten, "Flatten", {}, {}},
      {OpKind::kLayoutAdapt, "LayoutAdapt", {"from", "to", "models"}, {}},
      {OpKind::kConcatModels, "ConcatModels", {"models", "layout"}, {}},
  };
  return table;
}

const KindInfo& kind_info(OpKind kind) {
  for (const KindInfo& info : kind_table()) {
    if (info.kind == kind) return info;
  }
  throw SchemaError("unhandled op kind");
}

void check_keys(const json& obj, std::initializer_list<std::string_view> allowed,
                const std::string& where) {
  if (!obj.is_object()) throw SchemaError(where + ": expected an object");
  for (const auto& [key, value] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw SchemaError(where + ": unknown key '" + key + "'");
    }
  }
}

std::vector<std::string> string_list(const json& value, const std::string& where) {
  if (!value.is_array()) throw SchemaError(where + ": expected an array of strings");
  std::vector<std::string> out;
  for (const json& item : value) {
    if (!item.is_string()) throw SchemaError(where + ": expected an array of strings");
    out.push_back(item.get<std::string>());
  }
  return out;
}

void check_config(const Node& node) {
  const KindInfo& info = kind_info(node.kind);
  const std::string where = "node '" + node.id + "' config";
  if (!node.config.is_object()) throw SchemaError(where + ": expected an object");
  const bool structural = node.kind == OpKind::kLayoutAdapt || node.kind == OpKind::kConcatModels;
  for (const auto& [key, value] : node.config.items()) {
    const auto known = [&](const std::vector<std::string_view>& keys) {
      return std::find(keys.begin(), keys.end(), key) != keys.end();
    };
    const bool fusion_key = !structural && (key == "models" || key == "layout" || key == "replica");
    if (!known(info.required) && !known(info.optional) && !fusion_key) {
      throw SchemaError(where + ": unknown key '" + key + "' for " + std::string(info.name));
    }
    if (key == "layout" || key == "from" || key == "to" || key == "dtype") {
      if (!value.is_string()) throw SchemaError(where + ": '" + key + "' must be a string");
    } else if (!value.is_number() && !value.is_array()) {
      throw SchemaError(where + ": '" + key + "' must be numeric");
    }
  }
  for (std::string_view key : info.required) {
    if (!node.config.contains(key)) {
      throw SchemaError(where + ": missing key '" + std::string(key) + "'");
    }
  }
  if (node.config.contains("models") != node.config.contains("layout") && !structural) {
    throw SchemaError(where + ": 'models' and 'layout' go together");
  }
}

Shape shape_of(const json& value, const std::string& where) {
  if (!value.is_array() || value.empty()) throw SchemaError(where + ": expected a shape array");
  Shape s;
  for (const json& v : value) {
    if (!v.is_number_integer() || v.get<std::int64_t>() < 1) {
      throw SchemaError(where + ": shape extents must be positive integers");
    }
    s.push_back(v.get<std::int64_t>());
  }
  return s;
}

Shape input_shape_for(const GraphSpec& spec, const Node& node, std::size_t slot,
                      const std::map<std::string, Shape>& shapes) {
  const std::string& src = node.inputs.at(slot);
  const Node& producer = spec.node(src);
  const Shape& s = shapes.at(src);
  if (is_fused_node(producer) && !is_fused_node(node) && node.kind != OpKind::kLayoutAdapt) {
    if (!node_replica(node)) {
      throw ValidationError("node '" + node.id + "' reads fused '" + src +
                            "' but is neither fused nor a model replica");
    }
    return serial_shape(s, node_layout(producer), node_models(producer));
  }
  return s;
}

void require_layout(const GraphSpec& spec, const Node& node, FusedLayout wanted) {
  if (!is_fused_node(node)) return;
  if (node_layout(node) != wanted) {
    throw ValidationError("fused node '" + node.id + "' must use layout " +
                          std::string(layout_name(wanted)));
  }
  const Node& producer = spec.node(node.inputs.at(0));
  if (!is_fused_node(producer) || node_layout(producer) != wanted ||
      node_models(producer) != node_models(node)) {
    throw ValidationError("fused node '" + node.id + "' expects a " +
                          std::string(layout_name(wanted)) + " input from '" + producer.id + "'");
  }
}

void require_passthrough(const GraphSpec& spec, const Node& node) {
  if (!is_fused_node(node)) return;
  const Node& producer = spec.node(node.inputs.at(0));
  if (!is_fused_node(producer) || node_models(producer) != node_models(node)) {
    throw ValidationError("fused node '" + node.id + "' reads unfused '" + producer.id + "'");
  }
  if (node.kind != OpKind::kFlatten && node_layout(producer) != node_layout(node)) {
    throw ValidationError("fused node '" + node.id + "' changes layout without an adapter");
  }
}

std::int64_t product(const Shape& s, std::size_t from) {
  std::int64_t p = 1;
  for (std::size_t i = from; i < s.size(); ++i) p *= s[i];
  return p;
}

Shape infer_node(const GraphSpec& spec, const Node& node,
                 const std::map<std::string, Shape>& shapes) {
  const std::int64_t B = node_models(node);
  const bool fused = is_fused_node(node);
  const auto in = [&](std::size_t slot = 0) { return input_shape_for(spec, node, slot, shapes); };
  const std::size_t arity = node.inputs.size();
  const auto expect_arity = [&](std::size_t n) {
    if (arity != n) {
      throw ValidationError("node '" + node.id + "' takes " + std::to_string(n) + " input(s), got " +
                            std::to_string(arity));
    }
  };

  switch (node.kind) {
    case OpKind::kInput: {
      expect_arity(0);
      const Shape s = shape_of(node.config.at("shape"), "node '" + node.id + "' shape");
      return fused ? fused_shape(s, node_layout(node), B) : s;
    }
    case OpKind::kConv1d:
    case OpKind::kConv2d:
    case OpKind::kConvTranspose2d: {
      expect_arity(1);
      require_layout(spec, node, FusedLayout::kChannelFolded);
      const ConvConfig cfg = conv_config(node);
      return cfg.output_shape(in());
    }
    case OpKind::kLinear: {
      expect_arity(1);
      require_layout(spec, node, FusedLayout::kModelLeading);
      const LinearConfig cfg = linear_config(node);
      Shape s = in();
      if (s.back() != cfg.in_features) {
        throw DimensionError("node '" + node.id + "': Linear expects " +
                             std::to_string(cfg.in_features) + " features, input is " +
                             to_string(s));
      }
      s.back() = cfg.out_features;
      return s;
    }
    case OpKind::kBatchNorm1d:
    case OpKind::kBatchNorm2d: {
      expect_arity(1);
      require_layout(spec, node, FusedLayout::kChannelFolded);
      const Shape s = in();
      const std::size_t rank = node.kind == OpKind::kBatchNorm1d ? 2 : 4;
      if (s.size() != rank || s[1] != batch_norm_config(node).num_features) {
        throw DimensionError("node '" + node.id + "': " + std::string(op_kind_name(node.kind)) +
                             " cannot normalise " + to_string(s));
      }
      return s;
    }
    case OpKind::kLayerNorm: {
      expect_arity(1);
      require_layout(spec, node, FusedLayout::kModelLeading);
      const Shape s = in();
      const Shape& ns = layer_norm_config(node).normalized_shape;
      if (ns.size() > s.size() || !std::equal(ns.rbegin(), ns.rend(), s.rbegin())) {
        throw DimensionError("node '" + node.id + "': LayerNorm over " + to_string(ns) +
                             " does not fit " + to_string(s));
      }
      return s;
    }
    case OpKind::kEmbedding: {
      expect_arity(1);
      require_layout(spec, node, FusedLayout::kModelLeading);
      Shape s = in();
      s.push_back(embedding_config(node).embedding_dim);
      return s;
    }
    case OpKind::kMaxPool2d:
    case OpKind::kAdaptiveAvgPool2d: {
      expect_arity(1);
      require_layout(spec, node, FusedLayout::kChannelFolded);
      return pool_config(node).output_shape(in());
    }
    case OpKind::kDropout2d: {
      expect_arity(1);
      require_layout(spec, node, FusedLayout::kChannelFolded);
      const Shape s = in();
      if (s.size() != 4) throw DimensionError("node '" + node.id + "': Dropout2d needs [N,C,H,W]");
      return s;
    }
    case OpKind::kDropout:
    case OpKind::kReLU:
    case OpKind::kReLU6:
    case OpKind::kLeakyReLU:
    case OpKind::kTanh:
      expect_arity(1);
      require_passthrough(spec, node);
      return in();
    case OpKind::kFlatten: {
      expect_arity(1);
      require_passthrough(spec, node);
      const Shape s = in();
      if (!fused) {
        if (s.size() < 2) throw DimensionError("node '" + node.id + "': Flatten needs rank >= 2");
        return {s[0], product(s, 1)};
      }
      const FusedLayout from = node_layout(spec.node(node.inputs[0]));
      const FusedLayout to = node_layout(node);
      const Shape serial_in = serial_shape(s, from, B);
      if (serial_in.size() < 2) {
        throw DimensionError("node '" + node.id + "': Flatten needs rank >= 2");
      }
      const Shape serial_out{serial_in[0], product(serial_in, 1)};
      const FusedLayout expected =
          from == FusedLayout::kChannelFolded ? FusedLayout::kModelMid : from;
      if (to != expected) {
        throw ValidationError("fused Flatten '" + node.id + "' must output " +
                              std::string(layout_name(expected)));
      }
      return fused_shape(serial_out, to, B);
    }
    case OpKind::kLayoutAdapt: {
      expect_arity(1);
      const std::int64_t models = config_int(node.config, "models");
      const FusedLayout from = parse_layout(node.config.at("from").get<std::string>());
      const FusedLayout to = parse_layout(node.config.at("to").get<std::string>());
      const Node& producer = spec.node(node.inputs[0]);
      if (!is_fused_node(producer) || node_layout(producer) != from ||
          node_models(producer) != models) {
        throw ValidationError("adapter '" + node.id + "' does not match its input '" +
                              producer.id + "'");
      }
      return fused_shape(serial_shape(shapes.at(producer.id), from, models), to, models);
    }
    case OpKind::kConcatModels: {
      const std::int64_t models = config_int(node.config, "models");
      expect_arity(static_cast<std::size_t>(models));
      const Shape first = shapes.at(node.inputs[0]);
      for (const std::string& src : node.inputs) {
        if (is_fused_node(spec.node(src))) {
          throw ValidationError("ConcatModels '" + node.id + "' input '" + src + "' is fused");
        }
        if (shapes.at(src) != first) {
          throw DimensionError("ConcatModels '" + node.id + "' inputs disagree: " +
                               to_string(first) + " vs " + to_string(shapes.at(src)));
        }
      }
      return fused_shape(first, node_layout(node), models);
    }
  }
  throw SchemaError("unhandled op kind");
}

}  // namespace

std::string_view op_kind_name(OpKind kind) { return kind_info(kind).name; }

std::optional<OpKind> parse_op_kind(std::string_view name) {
  for (const KindInfo& info : kind_table()) {
    if (info.name == name) return info.kind;
  }
  return std::nullopt;
}

const Node* GraphSpec::find(std::string_view id) const {
  for (const Node& n : nodes) {
    if (n.id == id) return &n;
  }
  return nullptr;
}

const Node& GraphSpec::node(std::string_view id) const {
  const Node* n = find(id);
  if (n == nullptr) throw ValidationError("graph '" + name + "' has no node '" + std::string(id) + "'");
  return *n;
}

std::string GraphSpec::block_of(std::string_view id) const {
  for (const Block& b : blocks) {
    if (std::find(b.nodes.begin(), b.nodes.end(), id) != b.nodes.end()) return b.name;
  }
  return {};
}

std::vector<std::string> GraphSpec::consumers(std::string_view id) const {
  std::vector<std::string> out;
  for (const Node& n : nodes) {
    if (std::find(n.inputs.begin(), n.inputs.end(), id) != n.inputs.end()) out.push_back(n.id);
  }
  return out;
}

GraphSpec graph_from_json(const json& doc) {
  check_keys(doc, {"name", "inputs", "outputs", "blocks", "nodes"}, "graph");
  for (const char* key : {"name", "inputs", "outputs", "nodes"}) {
    if (!doc.contains(key)) throw SchemaError("graph: missing key '" + std::string(key) + "'");
  }
  GraphSpec spec;
  if (!doc.at("name").is_string()) throw SchemaError("graph: 'name' must be a string");
  spec.name = doc.at("name").get<std::string>();
  spec.inputs = string_list(doc.at("inputs"), "graph inputs");
  spec.outputs = string_list(doc.at("outputs"), "graph outputs");
  if (doc.contains("blocks")) {
    if (!doc.at("blocks").is_array()) throw SchemaError("graph: 'blocks' must be an array");
    for (const json& b : doc.at("blocks")) {
      check_keys(b, {"name", "nodes"}, "block");
      if (!b.contains("name") || !b.at("name").is_string() || !b.contains("nodes")) {
        throw SchemaError("block: needs a string 'name' and 'nodes'");
      }
      spec.blocks.push_back({b.at("name").get<std::string>(),
                             string_list(b.at("nodes"), "block '" + b.at("name").get<std::string>() + "'")});
    }
  }
  if (!doc.at("nodes").is_array()) throw SchemaError("graph: 'nodes' must be an array");
  for (const json& n : doc.at("nodes")) {
    const std::string id = n.is_object() && n.contains("id") && n.at("id").is_string()
                               ? n.at("id").get<std::string>()
                               : std::string("?");
    check_keys(n, {"id", "kind", "config", "inputs"}, "node '" + id + "'");
    if (id == "?") throw SchemaError("node without a string 'id'");
    if (!n.contains("kind") || !n.at("kind").is_string()) {
      throw SchemaError("node '" + id + "': missing string 'kind'");
    }
    const std::string kind = n.at("kind").get<std::string>();
    const std::optional<OpKind> parsed = parse_op_kind(kind);
    if (!parsed) throw SchemaError("node '" + id + "': unknown op kind '" + kind + "'");
    Node node{id, *parsed, n.value("config", json::object()),
              n.contains("inputs") ? string_list(n.at("inputs"), "node '" + id + "' inputs")
                                   : std::vector<std::string>{}};
    check_config(node);
    spec.nodes.push_back(std::move(node));
  }
  validate_graph(spec);
  return spec;
}

GraphSpec load_graph(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw SchemaError(std::string("graph JSON does not parse: ") + e.what());
  }
  return graph_from_json(doc);
}

json graph_to_json(const GraphSpec& spec) {
  json doc;
  doc["name"] = spec.name;
  doc["inputs"] = spec.inputs;
  doc["outputs"] = spec.outputs;
  doc["blocks"] = json::array();
  for (const Block& b : spec.blocks) doc["blocks"].push_back({{"name", b.name}, {"nodes", b.nodes}});
  doc["nodes"] = json::array();
  for (const Node& n : spec.nodes) {
    doc["nodes"].push_back({{"id", n.id},
                            {"kind", std::string(op_kind_name(n.kind))},
                            {"config", n.config},
                            {"inputs", n.inputs}});
  }
  return doc;
}

std::string save_graph(const GraphSpec& spec) { return graph_to_json(spec).dump(2) + "\n"; }

void validate_graph(const GraphSpec& spec) {
  std::set<std::string> ids;
  for (const Node& n : spec.nodes) {
    if (!ids.insert(n.id).second) throw ValidationError("duplicate node id '" + n.id + "'");
  }
  for (const Node& n : spec.nodes) {
    for (const std::string& src : n.inputs) {
      if (!ids.count(src)) {
        throw ValidationError("node '" + n.id + "' reads unknown node '" + src + "'");
      }
    }
  }
  for (const std::string& id : spec.inputs) {
    if (!ids.count(id) || spec.node(id).kind != OpKind::kInput) {
      throw ValidationError("graph input '" + id + "' is not an Input node");
    }
  }
  for (const std::string& id : spec.outputs) {
    if (!ids.count(id)) throw ValidationError("graph output '" + id + "' does not exist");
  }
  std::set<std::string> labelled;
  for (const Block& b : spec.blocks) {
    for (const std::string& id : b.nodes) {
      if (!ids.count(id)) {
        throw ValidationError("block '" + b.name + "' lists unknown node '" + id + "'");
      }
      if (!labelled.insert(id).second) {
        throw ValidationError("node '" + id + "' belongs to more than one block");
      }
    }
  }
  topological_order(spec);
}

std::vector<std::string> topological_order(const GraphSpec& spec) {
  std::map<std::string, std::size_t> position;
  for (std::size_t i = 0; i < spec.nodes.size(); ++i) position[spec.nodes[i].id] = i;
  std::vector<std::size_t> pending(spec.nodes.size(), 0);
  std::vector<std::vector<std::size_t>> readers(spec.nodes.size());
  for (std::size_t i = 0; i < spec.nodes.size(); ++i) {
    for (const std::string& src : spec.nodes[i].inputs) {
      auto it = position.find(src);
      if (it == position.end()) {
        throw ValidationError("node '" + spec.nodes[i].id + "' reads unknown node '" + src + "'");
      }
      ++pending[i];
      readers[it->second].push_back(i);
    }
  }
  std::priority_queue<std::size_t, std::vector<std::size_t>, std::greater<>> ready;
  for (std::size_t i = 0; i < pending.size(); ++i) {
    if (pending[i] == 0) ready.push(i);
  }
  std::vector<std::string> order;
  while (!ready.empty()) {
    const std::size_t i = ready.top();
    ready.pop();
    order.push_back(spec.nodes[i].id);
    for (std::size_t r : readers[i]) {
      if (--pending[r] == 0) ready.push(r);
    }
  }
  if (order.size() != spec.nodes.size()) {
    for (std::size_t i = 0; i < pending.size(); ++i) {
      if (pending[i] != 0) {
        throw ValidationError("graph '" + spec.name + "' has a cycle through node '" +
                              spec.nodes[i].id + "'");
      }
    }
  }
  return order;
}

std::map<std::string, Shape> infer_shapes(const GraphSpec& spec) {
  std::map<std::string, Shape> shapes;
  for (const std::string& id : topological_order(spec)) {
    const Node& node = spec.node(id);
    try {
      shapes[id] = infer_node(spec, node, shapes);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("node '" + id + "': bad config: " + e.what());
    }
  }
  return shapes;
}

std::vector<ParamSpec> parameter_specs(const Node& node) {
  const std::int64_t B = node_models(node);
  const bool fused = is_fused_node(node);
  switch (node.kind) {
    case OpKind::kConv1d:
    case OpKind::kConv2d:
    case OpKind::kConvTranspose2d: {
      const ConvConfig cfg = conv_config(node);
      return {{"weight", cfg.weight_shape()}, {"bias", cfg.bias_shape()}};
    }
    case OpKind::kLinear: {
      const LinearConfig cfg = linear_config(node);
      if (fused) return {{"weight", {B, cfg.in_features, cfg.out_features}}, {"bias", {B, 1, cfg.out_features}}};
      return {{"weight", {cfg.in_features, cfg.out_features}}, {"bias", {cfg.out_features}}};
    }
    case OpKind::kBatchNorm1d:
    case OpKind::kBatchNorm2d: {
      const std::int64_t c = batch_norm_config(node).num_features;
      return {{"weight", {c}}, {"bias", {c}}, {"running_mean", {c}, false}, {"running_var", {c}, false}};
    }
    case OpKind::kLayerNorm: {
      Shape s = layer_norm_config(node).normalized_shape;
      if (fused) s.insert(s.begin(), B);
      return {{"weight", s}, {"bias", s}};
    }
    case OpKind::kEmbedding: {
      const EmbeddingConfig cfg = embedding_config(node);
      return {{"table", {cfg.num_embeddings, cfg.embedding_dim}}};
    }
    default:
      return {};
  }
}

std::int64_t node_models(const Node& node) {
  if (node.kind == OpKind::kLayoutAdapt || node.kind == OpKind::kConcatModels) {
    return config_int(node.config, "models");
  }
  return node.config.contains("models") ? config_int(node.config, "models") : 1;
}

bool is_fused_node(const Node& node) {
  return node.kind == OpKind::kLayoutAdapt || node.kind == OpKind::kConcatModels ||
         node.config.contains("models");
}

std::optional<std::int64_t> node_replica(const Node& node) {
  if (!node.config.contains("replica")) return std::nullopt;
  return config_int(node.config, "replica");
}

FusedLayout node_layout(const Node& node) {
  if (node.kind == OpKind::kLayoutAdapt) return parse_layout(node.config.at("to").get<std::string>());
  if (!node.config.contains("layout")) {
    throw ValidationError("node '" + node.id + "' carries no fused layout");
  }
  return parse_layout(node.config.at("layout").get<std::string>());
}

std::vector<std::int64_t> config_ints(const json& config, std::string_view key, std::size_t dims) {
  const json& v = config.at(key);
  std::vector<std::int64_t> out;
  if (v.is_number_integer()) {
    out.assign(dims, v.get<std::int64_t>());
  } else if (v.is_array()) {
    for (const json& e : v) {
      if (!e.is_number_integer()) throw ConfigError("'" + std::string(key) + "' must hold integers");
      out.push_back(e.get<std::int64_t>());
    }
    if (out.size() != dims) {
      throw ConfigError("'" + std::string(key) + "' needs " + std::to_string(dims) + " entries");
    }
  } else {
    throw ConfigError("'" + std::string(key) + "' must be an integer or an integer list");
  }
  return out;
}

std::int64_t config_int(const json& config, std::string_view key) {
  const json& v = config.at(key);
  if (!v.is_number_integer()) throw ConfigError("'" + std::string(key) + "' must be an integer");
  return v.get<std::int64_t>();
}

double config_real(const json& config, std::string_view key, double fallback) {
  if (!config.contains(key)) return fallback;
  const json& v = config.at(key);
  if (!v.is_number()) throw ConfigError("'" + std::string(key) + "' must be a number");
  return v.get<double>();
}

}  // namespace hfta
