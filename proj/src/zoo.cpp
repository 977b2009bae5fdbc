#include "hfta/zoo.h"

#include "hfta/errors.h"
#include "hfta/layout.h"

namespace hfta {
namespace {

using nlohmann::json;

Node node(std::string id, OpKind kind, json config, std::vector<std::string> inputs) {
  return {std::move(id), kind, std::move(config), std::move(inputs)};
}

}  // namespace

GraphSpec mlp3_graph(std::int64_t batch, std::int64_t in, std::int64_t hidden,
                     std::int64_t classes) {
  GraphSpec g;
  g.name = "mlp3";
  g.inputs = {"x"};
  g.outputs = {"fc3"};
  g.blocks = {{"layer1", {"fc1", "relu1"}}, {"layer2", {"fc2", "relu2"}}, {"head", {"fc3"}}};
  g.nodes = {
      node("x", OpKind::kInput, {{"shape", {batch, in}}}, {}),
      node("fc1", OpKind::kLinear, {{"in_features", in}, {"out_features", hidden}}, {"x"}),
      node("relu1", OpKind::kReLU, json::object(), {"fc1"}),
      node("fc2", OpKind::kLinear, {{"in_features", hidden}, {"out_features", hidden}}, {"relu1"}),
      node("relu2", OpKind::kReLU, json::object(), {"fc2"}),
      node("fc3", OpKind::kLinear, {{"in_features", hidden}, {"out_features", classes}}, {"relu2"}),
  };
  return g;
}

GraphSpec minicnn_graph(std::int64_t batch) {
  GraphSpec g;
  g.name = "minicnn";
  g.inputs = {"x"};
  g.outputs = {"fc"};
  g.blocks = {{"stage1", {"conv1", "bn1", "relu1", "pool1"}},
              {"stage2", {"conv2", "bn2", "relu2", "pool2"}},
              {"head", {"flatten", "fc"}}};
  const auto conv = [](std::int64_t in, std::int64_t out) {
    return json{{"in_channels", in}, {"out_channels", out}, {"kernel_size", 3}, {"padding", 1}};
  };
  const json pool = {{"kernel_size", 2}};
  g.nodes = {
      node("x", OpKind::kInput, {{"shape", {batch, 3, 8, 8}}}, {}),
      node("conv1", OpKind::kConv2d, conv(3, 8), {"x"}),
      node("bn1", OpKind::kBatchNorm2d, {{"num_features", 8}}, {"conv1"}),
      node("relu1", OpKind::kReLU, json::object(), {"bn1"}),
      node("pool1", OpKind::kMaxPool2d, pool, {"relu1"}),
      node("conv2", OpKind::kConv2d, conv(8, 16), {"pool1"}),
      node("bn2", OpKind::kBatchNorm2d, {{"num_features", 16}}, {"conv2"}),
      node("relu2", OpKind::kReLU, json::object(), {"bn2"}),
      node("pool2", OpKind::kMaxPool2d, pool, {"relu2"}),
      node("flatten", OpKind::kFlatten, json::object(), {"pool2"}),
      node("fc", OpKind::kLinear, {{"in_features", 64}, {"out_features", 10}}, {"flatten"}),
  };
  return g;
}

GraphSpec minigan_g_graph(std::int64_t batch) {
  GraphSpec g;
  g.name = "minigan_g";
  g.inputs = {"z"};
  g.outputs = {"tanh"};
  g.blocks = {{"up1", {"deconv1", "bn1", "relu1"}}, {"up2", {"deconv2", "tanh"}}};
  g.nodes = {
      node("z", OpKind::kInput, {{"shape", {batch, 16, 1, 1}}}, {}),
      node("deconv1", OpKind::kConvTranspose2d,
           {{"in_channels", 16}, {"out_channels", 8}, {"kernel_size", 4}}, {"z"}),
      node("bn1", OpKind::kBatchNorm2d, {{"num_features", 8}}, {"deconv1"}),
      node("relu1", OpKind::kReLU, json::object(), {"bn1"}),
      node("deconv2", OpKind::kConvTranspose2d,
           {{"in_channels", 8}, {"out_channels", 1}, {"kernel_size", 4}, {"stride", 2},
            {"padding", 1}},
           {"relu1"}),
      node("tanh", OpKind::kTanh, json::object(), {"deconv2"}),
  };
  return g;
}

GraphSpec blocks4_graph(std::int64_t batch) {
  GraphSpec g;
  g.name = "blocks4";
  g.inputs = {"x"};
  g.outputs = {"fc2"};
  g.blocks = {{"b1", {"conv1", "relu1"}},
              {"b2", {"conv2", "bn2", "relu2"}},
              {"b3", {"flatten", "fc1", "ln"}},
              {"b4", {"act", "fc2"}}};
  g.nodes = {
      node("x", OpKind::kInput, {{"shape", {batch, 2, 6, 6}}}, {}),
      node("conv1", OpKind::kConv2d,
           {{"in_channels", 2}, {"out_channels", 4}, {"kernel_size", 3}, {"padding", 1}}, {"x"}),
      node("relu1", OpKind::kReLU, json::object(), {"conv1"}),
      node("conv2", OpKind::kConv2d,
           {{"in_channels", 4}, {"out_channels", 4}, {"kernel_size", 3}, {"stride", 2},
            {"groups", 2}},
           {"relu1"}),
      node("bn2", OpKind::kBatchNorm2d, {{"num_features", 4}}, {"conv2"}),
      node("relu2", OpKind::kLeakyReLU, {{"negative_slope", 0.1}}, {"bn2"}),
      node("flatten", OpKind::kFlatten, json::object(), {"relu2"}),
      node("fc1", OpKind::kLinear, {{"in_features", 16}, {"out_features", 12}}, {"flatten"}),
      node("ln", OpKind::kLayerNorm, {{"normalized_shape", {12}}}, {"fc1"}),
      node("act", OpKind::kTanh, json::object(), {"ln"}),
      node("fc2", OpKind::kLinear, {{"in_features", 12}, {"out_features", 3}}, {"act"}),
  };
  return g;
}

std::vector<std::string> zoo_names() { return {"mlp3", "minicnn", "minigan_g", "blocks4"}; }

ZooEntry zoo_entry(std::string_view name) {
  if (name == "mlp3") {
    return {"mlp3", mlp3_graph(), LossKind::kCrossEntropy, 16, {16}, 4, {}};
  }
  if (name == "minicnn") {
    return {"minicnn", minicnn_graph(), LossKind::kCrossEntropy, 16, {3, 8, 8}, 10, {}};
  }
  if (name == "minigan_g") {
    return {"minigan_g", minigan_g_graph(), LossKind::kMse, 16, {16, 1, 1}, 0, {1, 8, 8}};
  }
  if (name == "blocks4") {
    return {"blocks4", blocks4_graph(), LossKind::kCrossEntropy, 4, {2, 6, 6}, 3, {}};
  }
  throw ConfigError("unknown model '" + std::string(name) + "'");
}

Batch synthetic_batch(const ZooEntry& entry, Rng rng) {
  const std::int64_t n = entry.batch;
  const std::int64_t features = numel(entry.sample_shape);
  Shape x_shape = entry.sample_shape;
  x_shape.insert(x_shape.begin(), n);
  std::vector<double> x(static_cast<std::size_t>(n * features));

  if (entry.classes == 0) {
    for (double& v : x) v = rng.normal();
    Shape y_shape = entry.target_sample_shape;
    y_shape.insert(y_shape.begin(), n);
    std::vector<double> y(static_cast<std::size_t>(numel(y_shape)));
    for (double& v : y) v = rng.uniform(-1.0, 1.0);
    return {Tensor(x_shape, std::move(x)), Tensor(y_shape, std::move(y))};
  }

  Rng mean_rng = Rng(0).split("class-means").split(entry.name);
  std::vector<double> means(static_cast<std::size_t>(entry.classes * features));
  for (double& v : means) v = mean_rng.normal();
  std::vector<double> y(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const auto label = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(entry.classes)));
    y[i] = static_cast<double>(label);
    for (std::int64_t f = 0; f < features; ++f) {
      x[i * features + f] = means[label * features + f] + rng.normal(0.0, 0.5);
    }
  }
  return {Tensor(x_shape, std::move(x)), Tensor({n}, std::move(y))};
}

Batch synthetic_job_batch(const ZooEntry& entry, std::span<const Rng> per_model) {
  std::vector<Tensor> xs, ys;
  for (const Rng& r : per_model) {
    Batch b = synthetic_batch(entry, r);
    xs.push_back(b.x);
    ys.push_back(b.y);
  }
  return {stack_models(xs, FusedLayout::kModelLeading), stack_models(ys, FusedLayout::kModelLeading)};
}

}  // namespace hfta
