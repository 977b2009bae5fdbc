#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "hfta/errors.h"
#include "hfta/graph.h"

namespace hfta {

struct NodeFusibility {
  std::size_t position = 0;
  std::string node_id;
  bool fusible = true;
  std::string field;  // first differing field when not fusible
};

struct FusibilityReport {
  bool fusible = true;
  std::string structural;  // non-empty when the graphs cannot be aligned at all
  std::vector<NodeFusibility> nodes;

  const NodeFusibility* find(std::string_view node_id) const;
  std::string to_string() const;
};

// Node-by-node structural comparison of B graphs.
FusibilityReport check_fusible(std::span<const GraphSpec> specs);

// Which blocks to fuse. Nodes outside every block follow `fuse_unlabelled`;
// Input nodes are always fused.
struct FusePlan {
  std::map<std::string, bool> blocks;
  bool fuse_unlabelled = true;

  static FusePlan full();
  static FusePlan none(const GraphSpec& spec);
  // One flag per block of `spec`, in block order.
  static FusePlan from_mask(const GraphSpec& spec, std::uint64_t mask);
  // {"blocks": {name: bool}, "default": bool}
  static FusePlan from_json(const nlohmann::json& doc);

  bool fuses(const GraphSpec& spec, std::string_view node_id) const;
};

class PlanError : public FusionError {
 public:
  PlanError(const std::string& what, FusibilityReport report)
      : FusionError(what), report_(std::move(report)) {}
  const FusibilityReport& report() const { return report_; }

 private:
  FusibilityReport report_;
};

// Rewrites B graphs into one. Fused nodes keep their ids; unfused nodes
// become "<id>@<b>" copies; "<id>/adapt" re-layouts the input of `id`,
// "<id>/concat" joins per-model inputs of fused node `id`, and "<id>/out"
// brings graph output `id` into model-leading layout.
GraphSpec fuse_graphs(std::span<const GraphSpec> specs, const FusePlan& plan);

}  // namespace hfta
