#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hfta/graph.h"
#include "hfta/losses.h"
#include "hfta/rng.h"
#include "hfta/tensor.h"

namespace hfta {

struct ZooEntry {
  std::string name;
  GraphSpec spec;
  LossKind loss = LossKind::kCrossEntropy;
  std::int64_t batch = 16;
  Shape sample_shape;          // one input sample
  std::int64_t classes = 0;    // 0 for regression targets
  Shape target_sample_shape;   // regression targets only
};

GraphSpec mlp3_graph(std::int64_t batch = 16, std::int64_t in = 16, std::int64_t hidden = 16,
                     std::int64_t classes = 4);
GraphSpec minicnn_graph(std::int64_t batch = 16);
GraphSpec minigan_g_graph(std::int64_t batch = 16);
// Conv, batch norm, linear and layer norm split over four labelled blocks.
GraphSpec blocks4_graph(std::int64_t batch = 4);

std::vector<std::string> zoo_names();
// Throws ConfigError for unknown names.
ZooEntry zoo_entry(std::string_view name);

struct Batch {
  Tensor x;
  Tensor y;
};

// Seeded synthetic data. Classification inputs are Gaussian around one
// fixed mean per class (the means depend only on the model name); labels
// are uniform. Regression targets are uniform in (-1, 1).
Batch synthetic_batch(const ZooEntry& entry, Rng rng);
// B independent batches stacked model-leading.
Batch synthetic_job_batch(const ZooEntry& entry, std::span<const Rng> per_model);

}  // namespace hfta
