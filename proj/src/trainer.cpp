#include "hfta/trainer.h"

#include "hfta/autograd.h"
#include "hfta/errors.h"

namespace hfta {
namespace {

std::vector<double> values_of(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

Trainer::Trainer(Network network, FusedOptimizer optimizer, LossKind loss, Reduction reduction)
    : network_(std::move(network)), optimizer_(std::move(optimizer)), loss_(loss),
      reduction_(reduction) {
  if (reduction_ == Reduction::kNone) throw ConfigError("training needs a reducing loss");
}

std::vector<double> Trainer::step(std::span<const Tensor> inputs, const Tensor& target,
                                  const RunContext& ctx) {
  optimizer_.zero_grad();
  std::vector<double> losses;
  {
    GradTape tape;
    const std::vector<Tensor> out = network_.forward(inputs, ctx);
    if (network_.fused()) {
      const FusedLossValue value = fused_loss(loss_, out.front(), target, reduction_);
      losses = values_of(value.per_model);
      tape.backward(value.scaled);
    } else {
      const Tensor loss = serial_loss(loss_, out.front(), target, reduction_);
      losses = {loss.item()};
      tape.backward(loss);
    }
  }
  optimizer_.step();
  return losses;
}

std::vector<double> Trainer::evaluate(std::span<const Tensor> inputs, const Tensor& target,
                                      const RunContext& ctx) const {
  const std::vector<Tensor> out = network_.forward(inputs, ctx);
  if (network_.fused()) return values_of(per_model_losses(loss_, out.front(), target, reduction_));
  return {serial_loss(loss_, out.front(), target, reduction_).item()};
}

AdamHyper adam_hyper(std::span<const double> lrs, double weight_decay) {
  const std::size_t B = lrs.size();
  return {{"lr", {lrs.begin(), lrs.end()}},
          HyperVector::constant("beta1", 0.9, B),
          HyperVector::constant("beta2", 0.999, B),
          HyperVector::constant("weight_decay", weight_decay, B)};
}

AdadeltaHyper adadelta_hyper(std::span<const double> lrs, double rho, double weight_decay) {
  const std::size_t B = lrs.size();
  return {{"lr", {lrs.begin(), lrs.end()}},
          HyperVector::constant("rho", rho, B),
          HyperVector::constant("weight_decay", weight_decay, B)};
}

}  // namespace hfta
