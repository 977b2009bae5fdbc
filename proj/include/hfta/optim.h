#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hfta/fused_parameter.h"
#include "hfta/tensor.h"

namespace hfta {

// One value of a hyperparameter per fused model.
struct HyperVector {
  std::string name;
  std::vector<double> values;

  static HyperVector constant(std::string name, double value, std::size_t models);
  std::size_t size() const { return values.size(); }
  // Entries [first, first + count); FusionError when out of range.
  HyperVector slice(std::int64_t first, std::int64_t count) const;
};

// Tensor shaped like param.value whose model-b slice is filled with
// hv.values[b]. Requires hv.size() == param.model_count.
Tensor broadcast_hyper(const HyperVector& hv, const FusedParameter& param);

// Moment buffers shaped like each parameter, plus the shared step count.
// Adam: first = m, second = v. Adadelta: first = square_avg,
// second = acc_delta.
struct OptState {
  std::vector<Tensor> first;
  std::vector<Tensor> second;
  std::int64_t step = 0;
};

struct AdamHyper {
  HyperVector lr;
  HyperVector beta1;
  HyperVector beta2;
  HyperVector weight_decay;
  double eps = 1e-8;
};

struct AdadeltaHyper {
  HyperVector lr;
  HyperVector rho;
  HyperVector weight_decay;
  double eps = 1e-6;
};

// Adam with L2 weight decay folded into the gradient and bias correction
// on the shared step counter. Per model slice the update equals serial
// Adam run with that model's hyperparameters.
void fused_adam_step(std::span<FusedParameter> params, std::span<const Tensor> grads,
                     OptState& state, const AdamHyper& hyper);

void fused_adadelta_step(std::span<FusedParameter> params, std::span<const Tensor> grads,
                         OptState& state, const AdadeltaHyper& hyper);

// lr_b(epoch) = lr_b(0) * gamma_b ^ floor(epoch / period_b)
HyperVector fused_steplr(const HyperVector& initial_lr, std::int64_t epoch,
                         std::span<const std::int64_t> periods, const HyperVector& gamma);

enum class OptimizerKind { kAdam, kAdadelta };

// Owns the parameter list and state of one fused job and reads gradients
// from the parameters' grad buffers.
class FusedOptimizer {
 public:
  FusedOptimizer(std::vector<FusedParameter> params, AdamHyper hyper);
  FusedOptimizer(std::vector<FusedParameter> params, AdadeltaHyper hyper);

  void step();
  void zero_grad();
  void set_lr(const HyperVector& lr);
  const HyperVector& lr() const;

  OptimizerKind kind() const { return kind_; }
  const OptState& state() const { return state_; }
  std::span<FusedParameter> params() { return params_; }

 private:
  OptimizerKind kind_;
  std::vector<FusedParameter> params_;
  OptState state_;
  AdamHyper adam_;
  AdadeltaHyper adadelta_;
};

}  // namespace hfta
