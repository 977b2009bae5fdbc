#include <gtest/gtest.h>

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "hfta/errors.h"
#include "hfta/graph.h"
#include "hfta/layout.h"
#include "hfta/network.h"
#include "hfta/planner.h"
#include "hfta/zoo.h"

using namespace hfta;
using nlohmann::json;

namespace {

std::string fixture(const std::string& name) {
  std::ifstream in(std::string(HFTA_SOURCE_DIR) + "/fixtures/" + name);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

GraphSpec single_linear() {
  return graph_from_json(json::parse(R"({
    "name": "lin", "inputs": ["x"], "outputs": ["fc"], "blocks": [],
    "nodes": [
      {"id": "x", "kind": "Input", "config": {"shape": [4, 3]}, "inputs": []},
      {"id": "fc", "kind": "Linear", "config": {"in_features": 3, "out_features": 2}, "inputs": ["x"]}
    ]})"));
}

Tensor random_tensor(const Shape& shape, Rng& rng) {
  std::vector<double> data(static_cast<std::size_t>(numel(shape)));
  for (double& v : data) v = rng.normal();
  return Tensor(shape, std::move(data));
}

std::vector<Network> serial_models(const GraphSpec& spec, std::int64_t B, std::uint64_t seed) {
  std::vector<Network> nets;
  for (std::int64_t b = 0; b < B; ++b) nets.push_back(Network::initialize(spec, Rng(seed).split(static_cast<std::uint64_t>(b)), b));
  return nets;
}

// Max deviation between fused outputs and serial outputs on random inputs.
double fused_vs_serial(const GraphSpec& spec, std::int64_t B, const FusePlan& plan, std::uint64_t seed) {
  const std::vector<Network> nets = serial_models(spec, B, seed);
  const Network fused = Network::fuse(nets, plan);
  Rng rng(seed + 1000);
  const Shape x_shape = spec.node(spec.inputs[0]).config.at("shape").get<Shape>();
  std::vector<Tensor> xs;
  for (std::int64_t b = 0; b < B; ++b) xs.push_back(random_tensor(x_shape, rng));
  const RunContext ctx{true, Rng(seed)};
  const std::vector<Tensor> fin{stack_models(xs, FusedLayout::kModelLeading)};
  const std::vector<Tensor> parts = split_models(fused.forward(fin, ctx).front(), FusedLayout::kModelLeading, B);
  double worst = 0.0;
  for (std::int64_t b = 0; b < B; ++b) {
    const std::vector<Tensor> in{xs[b]};
    worst = std::max(worst, max_abs_diff(parts[b], nets[b].forward(in, ctx).front()));
  }
  return worst;
}

}  // namespace

TEST(GraphIo, SingleLinearRoundTrips) {
  const GraphSpec g = single_linear();
  EXPECT_EQ(load_graph(save_graph(g)), g);
  EXPECT_EQ(save_graph(load_graph(save_graph(g))), save_graph(g));
}

TEST(GraphIo, UnknownKindNamesTheNode) {
  try {
    load_graph(R"({"name": "g", "inputs": ["x"], "outputs": ["c"], "blocks": [],
      "nodes": [{"id": "x", "kind": "Input", "config": {"shape": [1, 1, 4]}, "inputs": []},
                {"id": "c", "kind": "Conv5d", "config": {}, "inputs": ["x"]}]})");
    FAIL() << "expected SchemaError";
  } catch (const SchemaError& e) {
    EXPECT_NE(std::string(e.what()).find("'c'"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("Conv5d"), std::string::npos) << e.what();
  }
}

TEST(GraphIo, UnknownKeysAreRejected) {
  json doc = graph_to_json(single_linear());
  doc["extra"] = 1;
  EXPECT_THROW(graph_from_json(doc), SchemaError);
  json node_doc = graph_to_json(single_linear());
  node_doc["nodes"][1]["weights"] = json::array();
  EXPECT_THROW(graph_from_json(node_doc), SchemaError);
}

TEST(GraphIo, CycleIsAValidationError) {
  EXPECT_THROW(load_graph(R"({"name": "g", "inputs": ["x"], "outputs": ["b"], "blocks": [],
      "nodes": [{"id": "x", "kind": "Input", "config": {"shape": [2, 3]}, "inputs": []},
                {"id": "a", "kind": "ReLU", "config": {}, "inputs": ["b"]},
                {"id": "b", "kind": "ReLU", "config": {}, "inputs": ["a"]}]})"),
               ValidationError);
}

TEST(GraphIo, DanglingReferenceIsAValidationError) {
  json doc = graph_to_json(single_linear());
  doc["nodes"][1]["inputs"] = {"nope"};
  EXPECT_THROW(validate_graph(graph_from_json(doc)), ValidationError);
}

TEST(GraphIo, FixturesEqualBuiltInGraphsAndRoundTrip) {
  for (const std::string& name : zoo_names()) {
    const std::string text = fixture(name + ".json");
    ASSERT_FALSE(text.empty()) << name;
    const GraphSpec g = load_graph(text);
    EXPECT_EQ(g, zoo_entry(name).spec) << name;
    EXPECT_EQ(save_graph(g), text) << name;
    EXPECT_EQ(load_graph(save_graph(g)), g) << name;
  }
}

TEST(GraphIo, MiniCnnFixtureInfersTenLogits) {
  const GraphSpec g = load_graph(fixture("minicnn.json"));
  const auto shapes = infer_shapes(g);
  EXPECT_EQ(shapes.at("fc"), (Shape{16, 10}));
  EXPECT_EQ(shapes.at("pool2"), (Shape{16, 16, 2, 2}));
}

TEST(GraphIo, ShapeMismatchIsReported) {
  json doc = graph_to_json(single_linear());
  doc["nodes"][1]["config"]["in_features"] = 5;
  EXPECT_THROW(infer_shapes(graph_from_json(doc)), Error);
}

TEST(CheckFusible, IdenticalCopiesAreFusible) {
  const GraphSpec g = minicnn_graph();
  const std::vector<GraphSpec> specs(4, g);
  const FusibilityReport r = check_fusible(specs);
  EXPECT_TRUE(r.fusible);
  EXPECT_EQ(r.nodes.size(), g.nodes.size());
  for (const NodeFusibility& n : r.nodes) EXPECT_TRUE(n.fusible);
}

TEST(CheckFusible, SingleGraphIsFusible) {
  const std::vector<GraphSpec> specs{blocks4_graph()};
  EXPECT_TRUE(check_fusible(specs).fusible);
}

TEST(CheckFusible, OutChannelsDifferenceIsFlagged) {
  GraphSpec a = minicnn_graph();
  GraphSpec b = a;
  for (Node& n : b.nodes) {
    if (n.id == "conv2") n.config["out_channels"] = 12;
  }
  const std::vector<GraphSpec> specs{a, b};
  const FusibilityReport r = check_fusible(specs);
  EXPECT_FALSE(r.fusible);
  ASSERT_NE(r.find("conv2"), nullptr);
  EXPECT_FALSE(r.find("conv2")->fusible);
  EXPECT_EQ(r.find("conv2")->field, "out_channels");
  EXPECT_TRUE(r.find("conv1")->fusible);
}

TEST(CheckFusible, DifferentNodeCountsAreStructuralNotThrown) {
  GraphSpec a = mlp3_graph();
  GraphSpec b = a;
  b.nodes.pop_back();
  b.outputs = {"relu2"};
  b.blocks.pop_back();
  const std::vector<GraphSpec> specs{a, b};
  FusibilityReport r;
  EXPECT_NO_THROW(r = check_fusible(specs));
  EXPECT_FALSE(r.fusible);
  EXPECT_FALSE(r.structural.empty());
}

TEST(FuseGraphs, FullyFusedMlpNodeCountIndependentOfB) {
  const GraphSpec g = mlp3_graph();
  std::set<std::size_t> counts;
  for (std::int64_t B : {1, 2, 4, 7}) {
    const std::vector<GraphSpec> specs(B, g);
    const GraphSpec f = fuse_graphs(specs, FusePlan::full());
    counts.insert(f.nodes.size());
    std::int64_t linear = 0;
    for (const Node& n : f.nodes) {
      if (n.kind == OpKind::kLinear) {
        ++linear;
        EXPECT_EQ(node_models(n), B);
      }
    }
    EXPECT_EQ(linear, 3);
  }
  EXPECT_EQ(counts.size(), 1u);
}

TEST(FuseGraphs, FusedConvCarriesGroupedExtents) {
  const std::vector<GraphSpec> specs(3, minicnn_graph());
  const GraphSpec f = fuse_graphs(specs, FusePlan::full());
  const Node& conv = f.node("conv1");
  EXPECT_EQ(config_int(conv.config, "in_channels"), 9);
  EXPECT_EQ(config_int(conv.config, "out_channels"), 24);
  EXPECT_EQ(config_int(conv.config, "groups"), 3);
  EXPECT_EQ(config_int(f.node("bn1").config, "num_features"), 24);
}

TEST(FuseGraphs, UnfusedPlanMakesBCopiesAndMatchesSerial) {
  const GraphSpec g = mlp3_graph();
  const std::vector<GraphSpec> specs(3, g);
  const GraphSpec f = fuse_graphs(specs, FusePlan::none(g));
  for (const Node& n : g.nodes) {
    if (n.kind == OpKind::kInput) continue;
    for (int b = 0; b < 3; ++b) EXPECT_NE(f.find(n.id + "@" + std::to_string(b)), nullptr) << n.id;
  }
  EXPECT_EQ(fused_vs_serial(g, 3, FusePlan::none(g), 1), 0.0);
}

TEST(FuseGraphs, HalfFusedPlanMatchesSerial) {
  for (const std::string& name : zoo_names()) {
    const GraphSpec g = zoo_entry(name).spec;
    const std::uint64_t first_only = 1;
    EXPECT_LE(fused_vs_serial(g, 3, FusePlan::from_mask(g, first_only), 2), 1e-10) << name;
    EXPECT_LE(fused_vs_serial(g, 2, FusePlan::full(), 3), 1e-10) << name;
  }
}

TEST(FuseGraphs, EveryMaskOfBlocks4MatchesSerial) {
  const GraphSpec g = blocks4_graph();
  for (std::uint64_t mask = 0; mask < 16; ++mask)
    EXPECT_LE(fused_vs_serial(g, 2, FusePlan::from_mask(g, mask), 10 + mask), 1e-10) << "mask " << mask;
}

TEST(FuseGraphs, MoreFusedBlocksNeverAddNodes) {
  const GraphSpec g = blocks4_graph();
  ASSERT_EQ(g.blocks.size(), 4u);
  for (std::int64_t B : {2, 3}) {
    const std::vector<GraphSpec> specs(B, g);
    std::vector<std::size_t> count(16);
    for (std::uint64_t mask = 0; mask < 16; ++mask) count[mask] = fuse_graphs(specs, FusePlan::from_mask(g, mask)).nodes.size();
    for (std::uint64_t a = 0; a < 16; ++a)
      for (std::uint64_t b = 0; b < 16; ++b)
        if ((a & b) == a) {
          EXPECT_GE(count[a], count[b]) << "B=" << B << " " << a << " subset of " << b;
        }
  }
}

TEST(FuseGraphs, InfusibleBlockMarkedFusedIsAPlanError) {
  GraphSpec a = mlp3_graph();
  GraphSpec b = a;
  for (Node& n : b.nodes) {
    if (n.id == "fc2") n.config["out_features"] = 24;
    if (n.id == "fc3") n.config["in_features"] = 24;
  }
  const std::vector<GraphSpec> specs{a, b};
  try {
    fuse_graphs(specs, FusePlan::full());
    FAIL() << "expected PlanError";
  } catch (const PlanError& e) {
    EXPECT_FALSE(e.report().fusible);
    EXPECT_EQ(e.report().find("fc2")->field, "out_features");
  }
  // Leaving the differing blocks unfused is allowed.
  FusePlan plan = FusePlan::full();
  plan.blocks["layer2"] = false;
  plan.blocks["head"] = false;
  EXPECT_NO_THROW(fuse_graphs(specs, plan));
}

TEST(FuseGraphs, UnknownPlanBlockThrows) {
  const std::vector<GraphSpec> specs(2, mlp3_graph());
  FusePlan plan;
  plan.blocks["nope"] = true;
  EXPECT_THROW(fuse_graphs(specs, plan), ConfigError);
}

TEST(FuseGraphs, ExtractedParametersKeepSerialShapes) {
  for (const std::string& name : zoo_names()) {
    const GraphSpec g = zoo_entry(name).spec;
    for (std::uint64_t mask : {std::uint64_t{0}, std::uint64_t{1}, ~std::uint64_t{0}}) {
      const std::vector<Network> nets = serial_models(g, 3, 4);
      const Network fused = Network::fuse(nets, FusePlan::from_mask(g, mask));
      for (std::int64_t b = 0; b < 3; ++b) {
        const Network back = fused.extract(b);
        ASSERT_EQ(back.params().size(), nets[b].params().size());
        for (std::size_t i = 0; i < back.params().size(); ++i) {
          const NetParam& p = back.params()[i];
          const FusedParameter& q = nets[b].param(p.node, p.name);
          EXPECT_EQ(p.param.value.shape(), q.value.shape()) << name << " " << p.node << "." << p.name;
          EXPECT_EQ(max_abs_diff(p.param.value, q.value), 0.0);
        }
      }
    }
  }
}

TEST(FusePlanJson, ParsesBlocksAndDefault) {
  const FusePlan p = FusePlan::from_json(json::parse(fixture("plan_layer2_unfused.json")));
  const GraphSpec g = mlp3_graph();
  EXPECT_TRUE(p.fuses(g, "fc1"));
  EXPECT_FALSE(p.fuses(g, "fc2"));
  EXPECT_TRUE(p.fuses(g, "fc3"));
  EXPECT_THROW(FusePlan::from_json(json::parse(R"({"blocks": {"a": 1}})")), SchemaError);
}
