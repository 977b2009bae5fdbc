#pragma once

#include <vector>

#include "hfta/losses.h"
#include "hfta/network.h"
#include "hfta/optim.h"
#include "hfta/zoo.h"

namespace hfta {

// Forward, loss, backward and optimizer step for one serial or fused job.
class Trainer {
 public:
  Trainer(Network network, FusedOptimizer optimizer, LossKind loss,
          Reduction reduction = Reduction::kMean);

  // Inputs and targets follow the network's convention (model-leading for
  // fused jobs; a serial-shaped target is shared by all models). Returns
  // each model's loss before the update.
  std::vector<double> step(std::span<const Tensor> inputs, const Tensor& target,
                           const RunContext& ctx);

  // Loss of every model without updating anything.
  std::vector<double> evaluate(std::span<const Tensor> inputs, const Tensor& target,
                               const RunContext& ctx) const;

  Network& network() { return network_; }
  const Network& network() const { return network_; }
  FusedOptimizer& optimizer() { return optimizer_; }

 private:
  Network network_;
  FusedOptimizer optimizer_;
  LossKind loss_;
  Reduction reduction_;
};

// Per-model learning rates, shared defaults for the rest.
AdamHyper adam_hyper(std::span<const double> lrs, double weight_decay = 0.0);
AdadeltaHyper adadelta_hyper(std::span<const double> lrs, double rho = 0.9,
                             double weight_decay = 0.0);

}  // namespace hfta
