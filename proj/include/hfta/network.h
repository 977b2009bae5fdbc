#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hfta/fused_parameter.h"
#include "hfta/graph.h"
#include "hfta/planner.h"
#include "hfta/rng.h"
#include "hfta/tensor.h"

namespace hfta {

struct RunContext {
  bool training = true;
  Rng rng{0};  // dropout streams derive from this per model and node
};

struct NetParam {
  std::string node;  // node id in the executed graph
  std::string name;
  FusedParameter param;
  bool trainable = true;
};

// Executable graph plus its parameters. A serial network runs one model;
// a fused network runs a whole job. Copies share parameter storage.
class Network {
 public:
  // Fresh serial network. `model_key` names the model's random streams.
  static Network initialize(const GraphSpec& spec, const Rng& rng, std::int64_t model_key = 0);
  // Fuses B serial networks over fusible graphs; parameters are copied.
  static Network fuse(std::span<const Network> models, const FusePlan& plan);

  // Graph inputs in order. Serial networks take serial tensors, fused
  // networks take model-leading [B, ...] tensors. Outputs follow the same
  // convention.
  std::vector<Tensor> forward(std::span<const Tensor> inputs, const RunContext& ctx) const;

  // Serial network of job model b with copied parameters.
  Network extract(std::int64_t b) const;

  const GraphSpec& spec() const { return spec_; }
  const GraphSpec& source_spec() const { return source_; }
  bool fused() const { return fused_; }
  std::int64_t model_count() const { return static_cast<std::int64_t>(model_keys_.size()); }
  std::int64_t model_key(std::int64_t b) const { return model_keys_.at(b); }

  std::vector<FusedParameter> parameters() const;  // trainable only
  std::span<const NetParam> params() const { return params_; }
  const FusedParameter& param(std::string_view node, std::string_view name) const;
  FusedParameter& param(std::string_view node, std::string_view name);

  // Deep copy with independent parameter storage.
  Network clone() const;

 private:
  GraphSpec spec_;
  GraphSpec source_;
  bool fused_ = false;
  std::vector<std::int64_t> model_keys_;
  std::vector<NetParam> params_;
};

}  // namespace hfta
