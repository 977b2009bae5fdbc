#include "hfta/planner.h"

#include <set>
#include <sstream>

#include "hfta/node_config.h"

namespace hfta {
namespace {

using nlohmann::json;
using Fields = std::vector<std::pair<std::string, json>>;

// Config with defaults filled in, as an ordered field list.
Fields normalized(const Node& node) {
  switch (node.kind) {
    case OpKind::kInput:
      return {{"shape", node.config.at("shape")},
              {"dtype", node.config.value("dtype", std::string("real"))}};
    case OpKind::kConv1d:
    case OpKind::kConv2d:
    case OpKind::kConvTranspose2d: {
      const ConvConfig c = conv_config(node);
      return {{"in_channels", c.in_channels}, {"out_channels", c.out_channels},
              {"kernel_size", c.kernel},      {"stride", c.stride},
              {"padding", c.padding},         {"groups", c.groups}};
    }
    case OpKind::kLinear: {
      const LinearConfig c = linear_config(node);
      return {{"in_features", c.in_features}, {"out_features", c.out_features}};
    }
    case OpKind::kBatchNorm1d:
    case OpKind::kBatchNorm2d: {
      const BatchNormConfig c = batch_norm_config(node);
      return {{"num_features", c.num_features}, {"eps", c.eps}, {"momentum", c.momentum}};
    }
    case OpKind::kLayerNorm: {
      const LayerNormConfig c = layer_norm_config(node);
      return {{"normalized_shape", c.normalized_shape}, {"eps", c.eps}};
    }
    case OpKind::kEmbedding: {
      const EmbeddingConfig c = embedding_config(node);
      return {{"num_embeddings", c.num_embeddings}, {"embedding_dim", c.embedding_dim}};
    }
    case OpKind::kMaxPool2d:
    case OpKind::kAdaptiveAvgPool2d: {
      const PoolConfig c = pool_config(node);
      if (c.kind == PoolKind::kMax2d) {
        return {{"kernel_size", c.kernel}, {"stride", c.stride}, {"padding", c.padding}};
      }
      return {{"output_size", c.output_size}};
    }
    case OpKind::kDropout:
    case OpKind::kDropout2d:
      return {{"p", dropout_p(node)}};
    case OpKind::kLeakyReLU:
      return {{"negative_slope", negative_slope(node)}};
    default:
      return {};
  }
}

json with_fusion(json config, std::int64_t models, FusedLayout layout) {
  config["models"] = models;
  config["layout"] = std::string(layout_name(layout));
  return config;
}

bool fixed_layout(OpKind kind, FusedLayout* layout) {
  switch (kind) {
    case OpKind::kConv1d:
    case OpKind::kConv2d:
    case OpKind::kConvTranspose2d:
    case OpKind::kBatchNorm1d:
    case OpKind::kBatchNorm2d:
    case OpKind::kMaxPool2d:
    case OpKind::kAdaptiveAvgPool2d:
    case OpKind::kDropout2d:
      *layout = FusedLayout::kChannelFolded;
      return true;
    case OpKind::kLinear:
    case OpKind::kLayerNorm:
    case OpKind::kEmbedding:
      *layout = FusedLayout::kModelLeading;
      return true;
    default:
      return false;
  }
}

class Rewriter {
 public:
  Rewriter(std::span<const GraphSpec> specs, const FusePlan& plan)
      : specs_(specs), base_(specs.front()), plan_(plan),
        models_(static_cast<std::int64_t>(specs.size())) {}

  GraphSpec run() {
    out_.name = base_.name;
    out_.inputs = base_.inputs;
    for (const Block& b : base_.blocks) out_.blocks.push_back({b.name, {}});
    for (const std::string& id : topological_order(base_)) {
      const Node& node = base_.node(id);
      if (fused(id)) {
        emit_fused(node);
      } else {
        for (std::int64_t b = 0; b < models_; ++b) emit_replica(node, b);
      }
    }
    for (const std::string& id : base_.outputs) out_.outputs.push_back(emit_output(id));
    return std::move(out_);
  }

 private:
  bool fused(const std::string& id) const {
    return base_.node(id).kind == OpKind::kInput || plan_.fuses(base_, id);
  }

  // Layout a fused producer should hand to `consumer`.
  FusedLayout wanted_by(const std::string& consumer) const {
    const Node& node = base_.node(consumer);
    if (!fused(consumer)) return FusedLayout::kModelLeading;
    FusedLayout layout;
    if (fixed_layout(node.kind, &layout)) return layout;
    const std::vector<std::string> next = base_.consumers(consumer);
    if (next.empty()) return FusedLayout::kModelLeading;
    if (node.kind == OpKind::kFlatten) return FusedLayout::kModelLeading;
    return wanted_by(next.front());
  }

  void add(Node node, const std::string& owner) {
    const std::string block = base_.block_of(owner);
    if (!block.empty()) {
      for (Block& b : out_.blocks) {
        if (b.name == block) b.nodes.push_back(node.id);
      }
    }
    out_.nodes.push_back(std::move(node));
  }

  // Fused tensor feeding `consumer` from `src` in `layout` (any layout when
  // null), inserting an adapter or a concat bridge as needed.
  std::pair<std::string, FusedLayout> fused_input(const std::string& src,
                                                   const std::string& consumer,
                                                   const FusedLayout* layout) {
    if (fused(src)) {
      const FusedLayout have = layout_[src];
      if (layout == nullptr || *layout == have) return {src, have};
      Node adapt{consumer + "/adapt", OpKind::kLayoutAdapt,
                 {{"from", std::string(layout_name(have))},
                  {"to", std::string(layout_name(*layout))},
                  {"models", models_}},
                 {src}};
      add(std::move(adapt), consumer);
      layout_[consumer + "/adapt"] = *layout;
      return {consumer + "/adapt", *layout};
    }
    const FusedLayout target = layout != nullptr ? *layout : wanted_by(consumer);
    Node concat{consumer + "/concat", OpKind::kConcatModels,
                {{"models", models_}, {"layout", std::string(layout_name(target))}}, {}};
    for (std::int64_t b = 0; b < models_; ++b) concat.inputs.push_back(replica_id(src, b));
    add(std::move(concat), consumer);
    layout_[consumer + "/concat"] = target;
    return {consumer + "/concat", target};
  }

  static std::string replica_id(const std::string& id, std::int64_t b) {
    return id + "@" + std::to_string(b);
  }

  void emit_fused(const Node& node) {
    std::vector<Node> per_model;
    for (const GraphSpec& s : specs_) per_model.push_back(s.node(node.id));
    Node out{node.id, node.kind, json::object(), {}};
    FusedLayout layout = FusedLayout::kModelLeading;
    const bool fixed = fixed_layout(node.kind, &layout);

    if (node.kind == OpKind::kInput) {
      const std::vector<std::string> next = base_.consumers(node.id);
      layout = next.empty() ? FusedLayout::kModelLeading : wanted_by(next.front());
      if (node.config.value("dtype", std::string("real")) == "index") {
        layout = FusedLayout::kModelLeading;
      }
      out.config = with_fusion(node.config, models_, layout);
    } else {
      auto [src, have] = fused_input(node.inputs.at(0), node.id, fixed ? &layout : nullptr);
      out.inputs = {src};
      if (!fixed) {
        layout = have;
        if (node.kind == OpKind::kFlatten && have == FusedLayout::kChannelFolded) {
          layout = FusedLayout::kModelMid;
        }
      }
      out.config = with_fusion(fused_config(per_model), models_, layout);
    }
    layout_[node.id] = layout;
    add(std::move(out), node.id);
  }

  json fused_config(const std::vector<Node>& per_model) const {
    const Node& first = per_model.front();
    switch (first.kind) {
      case OpKind::kConv1d:
      case OpKind::kConv2d:
      case OpKind::kConvTranspose2d: {
        std::vector<ConvConfig> configs;
        for (const Node& n : per_model) configs.push_back(conv_config(n));
        return conv_to_json(fuse_conv_config(configs));
      }
      case OpKind::kBatchNorm1d:
      case OpKind::kBatchNorm2d: {
        BatchNormConfig c = batch_norm_config(first);
        c.num_features *= models_;
        return batch_norm_to_json(c);
      }
      case OpKind::kEmbedding: {
        EmbeddingConfig c = embedding_config(first);
        c.num_embeddings *= models_;
        return embedding_to_json(c);
      }
      default:
        return first.config;
    }
  }

  void emit_replica(const Node& node, std::int64_t b) {
    Node out{replica_id(node.id, b), node.kind, specs_[b].node(node.id).config, {}};
    out.config["replica"] = b;
    for (const std::string& src : node.inputs) {
      out.inputs.push_back(fused(src) ? src : replica_id(src, b));
    }
    add(std::move(out), node.id);
  }

  std::string emit_output(const std::string& id) {
    const FusedLayout target = FusedLayout::kModelLeading;
    if (fused(id)) {
      if (layout_[id] == target) return id;
      Node adapt{id + "/out", OpKind::kLayoutAdapt,
                 {{"from", std::string(layout_name(layout_[id]))},
                  {"to", std::string(layout_name(target))},
                  {"models", models_}},
                 {id}};
      add(std::move(adapt), id);
      return id + "/out";
    }
    Node concat{id + "/out", OpKind::kConcatModels,
                {{"models", models_}, {"layout", std::string(layout_name(target))}}, {}};
    for (std::int64_t b = 0; b < models_; ++b) concat.inputs.push_back(replica_id(id, b));
    add(std::move(concat), id);
    return id + "/out";
  }

  std::span<const GraphSpec> specs_;
  const GraphSpec& base_;
  const FusePlan& plan_;
  std::int64_t models_;
  GraphSpec out_;
  std::map<std::string, FusedLayout> layout_;
};

}  // namespace

const NodeFusibility* FusibilityReport::find(std::string_view node_id) const {
  for (const NodeFusibility& n : nodes) {
    if (n.node_id == node_id) return &n;
  }
  return nullptr;
}

std::string FusibilityReport::to_string() const {
  std::ostringstream os;
  os << "fusible: " << (fusible ? "yes" : "no") << "\n";
  if (!structural.empty()) os << "structural mismatch: " << structural << "\n";
  for (const NodeFusibility& n : nodes) {
    os << "  [" << n.position << "] " << n.node_id << ": "
       << (n.fusible ? "fusible" : "infusible (" + n.field + ")") << "\n";
  }
  return os.str();
}

FusibilityReport check_fusible(std::span<const GraphSpec> specs) {
  if (specs.empty()) throw ContractError("check_fusible needs at least one graph");
  FusibilityReport report;
  const GraphSpec& base = specs.front();
  for (std::size_t m = 1; m < specs.size(); ++m) {
    const GraphSpec& other = specs[m];
    std::string mismatch;
    if (other.nodes.size() != base.nodes.size()) {
      mismatch = "graph " + std::to_string(m) + " has " + std::to_string(other.nodes.size()) +
                 " nodes, graph 0 has " + std::to_string(base.nodes.size());
    } else if (other.inputs != base.inputs || other.outputs != base.outputs) {
      mismatch = "graph " + std::to_string(m) + " has different inputs or outputs";
    } else if (other.blocks != base.blocks) {
      mismatch = "graph " + std::to_string(m) + " has different blocks";
    }
    if (!mismatch.empty()) {
      report.fusible = false;
      report.structural = mismatch;
      return report;
    }
  }
  for (std::size_t i = 0; i < base.nodes.size(); ++i) {
    const Node& node = base.nodes[i];
    NodeFusibility entry{i, node.id, true, {}};
    const Fields reference = normalized(node);
    for (std::size_t m = 1; m < specs.size() && entry.fusible; ++m) {
      const Node& other = specs[m].nodes[i];
      if (other.id != node.id) {
        entry = {i, node.id, false, "id"};
      } else if (other.kind != node.kind) {
        entry = {i, node.id, false, "kind"};
      } else if (other.inputs != node.inputs) {
        entry = {i, node.id, false, "inputs"};
      } else {
        const Fields fields = normalized(other);
        for (std::size_t f = 0; f < fields.size(); ++f) {
          if (fields[f].second != reference[f].second) {
            entry = {i, node.id, false, fields[f].first};
            break;
          }
        }
      }
    }
    report.fusible = report.fusible && entry.fusible;
    report.nodes.push_back(entry);
  }
  return report;
}

FusePlan FusePlan::full() { return FusePlan{}; }

FusePlan FusePlan::none(const GraphSpec& spec) {
  FusePlan plan;
  plan.fuse_unlabelled = false;
  for (const Block& b : spec.blocks) plan.blocks[b.name] = false;
  return plan;
}

FusePlan FusePlan::from_mask(const GraphSpec& spec, std::uint64_t mask) {
  FusePlan plan;
  for (std::size_t i = 0; i < spec.blocks.size(); ++i) {
    plan.blocks[spec.blocks[i].name] = ((mask >> i) & 1U) != 0;
  }
  return plan;
}

FusePlan FusePlan::from_json(const json& doc) {
  if (!doc.is_object()) throw SchemaError("plan: expected an object");
  FusePlan plan;
  for (const auto& [key, value] : doc.items()) {
    if (key == "default") {
      if (!value.is_boolean()) throw SchemaError("plan: 'default' must be a boolean");
      plan.fuse_unlabelled = value.get<bool>();
    } else if (key == "blocks") {
      if (!value.is_object()) throw SchemaError("plan: 'blocks' must map names to booleans");
      for (const auto& [name, flag] : value.items()) {
        if (!flag.is_boolean()) throw SchemaError("plan: block '" + name + "' flag must be a boolean");
        plan.blocks[name] = flag.get<bool>();
      }
    } else {
      throw SchemaError("plan: unknown key '" + key + "'");
    }
  }
  return plan;
}

bool FusePlan::fuses(const GraphSpec& spec, std::string_view node_id) const {
  const std::string block = spec.block_of(node_id);
  if (block.empty()) return fuse_unlabelled;
  auto it = blocks.find(block);
  return it == blocks.end() ? fuse_unlabelled : it->second;
}

GraphSpec fuse_graphs(std::span<const GraphSpec> specs, const FusePlan& plan) {
  const FusibilityReport report = check_fusible(specs);
  if (!report.structural.empty()) {
    throw PlanError("graphs cannot be aligned: " + report.structural, report);
  }
  const GraphSpec& base = specs.front();
  for (const auto& [name, flag] : plan.blocks) {
    const bool known = std::any_of(base.blocks.begin(), base.blocks.end(),
                                   [&](const Block& b) { return b.name == name; });
    if (!known) throw ConfigError("plan names unknown block '" + name + "'");
  }
  for (const NodeFusibility& n : report.nodes) {
    const bool wants_fusion =
        base.node(n.node_id).kind == OpKind::kInput || plan.fuses(base, n.node_id);
    if (!n.fusible && wants_fusion) {
      throw PlanError("node '" + n.node_id + "' is fused by the plan but differs in '" + n.field +
                          "'",
                      report);
    }
  }
  GraphSpec fused = Rewriter(specs, plan).run();
  validate_graph(fused);
  infer_shapes(fused);
  return fused;
}

}  // namespace hfta
