#include "hfta/optim.h"

#include <cmath>

#include "hfta/errors.h"

namespace hfta {
namespace {

std::int64_t job_models(std::span<const FusedParameter> params) {
  std::int64_t models = 0;
  for (const FusedParameter& p : params) models = std::max(models, p.first_model + p.model_count);
  return models;
}

void check_length(const HyperVector& hv, std::int64_t models) {
  if (static_cast<std::int64_t>(hv.size()) != models) {
    throw FusionError("hyperparameter '" + hv.name + "' has " + std::to_string(hv.size()) +
                      " entries for a job of " + std::to_string(models) + " models");
  }
}

void check_range(const HyperVector& hv, double lo, double hi, bool lo_open, bool hi_open) {
  for (double v : hv.values) {
    const bool ok = (lo_open ? v > lo : v >= lo) && (hi_open ? v < hi : v <= hi);
    if (!ok) throw ConfigError("hyperparameter '" + hv.name + "' value " + std::to_string(v) +
                               " out of range");
  }
}

void prepare_state(std::span<const FusedParameter> params, std::span<const Tensor> grads,
                   OptState& state) {
  if (grads.size() != params.size()) throw StateError("one gradient per parameter is required");
  if (state.first.empty() && state.second.empty()) {
    for (const FusedParameter& p : params) {
      state.first.push_back(Tensor::zeros(p.value.shape()));
      state.second.push_back(Tensor::zeros(p.value.shape()));
    }
  }
  if (state.first.size() != params.size() || state.second.size() != params.size()) {
    throw StateError("optimizer state tracks a different parameter list");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i].validate();
    const Shape& s = params[i].value.shape();
    if (state.first[i].shape() != s || state.second[i].shape() != s || grads[i].shape() != s) {
      throw StateError("optimizer state/gradient shape drifted from parameter " + to_string(s));
    }
  }
}

// Calls fn(begin, end, b) for every contiguous run of elements owned by
// job model b; the same result as multiplying by broadcast_hyper tensors.
template <typename Fn>
void for_each_model_run(const FusedParameter& p, Fn&& fn) {
  const Shape& s = p.value.shape();
  std::int64_t outer = 1, inner = 1;
  for (std::int64_t d = 0; d < p.fusion_axis; ++d) outer *= s[d];
  for (std::size_t d = p.fusion_axis + 1; d < s.size(); ++d) inner *= s[d];
  const std::int64_t block = p.per_model_extent * inner;
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t b = 0; b < p.model_count; ++b) {
      const std::int64_t begin = (o * p.model_count + b) * block;
      fn(static_cast<std::size_t>(begin), static_cast<std::size_t>(begin + block),
         static_cast<std::size_t>(p.first_model + b));
    }
}

}  // namespace

HyperVector HyperVector::constant(std::string name, double value, std::size_t models) {
  return {std::move(name), std::vector<double>(models, value)};
}

HyperVector HyperVector::slice(std::int64_t first, std::int64_t count) const {
  if (first < 0 || count < 0 || first + count > static_cast<std::int64_t>(values.size())) {
    throw FusionError("hyperparameter '" + name + "' has no entries [" + std::to_string(first) +
                      ", " + std::to_string(first + count) + ")");
  }
  return {name, std::vector<double>(values.begin() + first, values.begin() + first + count)};
}

Tensor broadcast_hyper(const HyperVector& hv, const FusedParameter& param) {
  if (static_cast<std::int64_t>(hv.size()) != param.model_count) {
    throw FusionError("hyperparameter '" + hv.name + "' has " + std::to_string(hv.size()) +
                      " entries but the parameter fuses " + std::to_string(param.model_count) +
                      " models");
  }
  const Shape& s = param.value.shape();
  std::int64_t outer = 1, inner = 1;
  for (std::int64_t d = 0; d < param.fusion_axis; ++d) outer *= s[d];
  for (std::size_t d = param.fusion_axis + 1; d < s.size(); ++d) inner *= s[d];
  const std::int64_t block = param.per_model_extent * inner;
  std::vector<double> out(static_cast<std::size_t>(numel(s)));
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t b = 0; b < param.model_count; ++b)
      std::fill_n(out.begin() + (o * param.model_count + b) * block, block, hv.values[b]);
  return Tensor(s, std::move(out));
}

void fused_adam_step(std::span<FusedParameter> params, std::span<const Tensor> grads,
                     OptState& state, const AdamHyper& hyper) {
  const std::int64_t models = job_models(params);
  for (const HyperVector* hv : {&hyper.lr, &hyper.beta1, &hyper.beta2, &hyper.weight_decay}) {
    check_length(*hv, models);
  }
  check_range(hyper.lr, 0.0, 1e300, true, false);
  check_range(hyper.beta1, 0.0, 1.0, true, true);
  check_range(hyper.beta2, 0.0, 1.0, true, true);
  prepare_state(params, grads, state);
  state.step += 1;
  const auto t = static_cast<double>(state.step);

  std::vector<double> c1, c2;
  for (double v : hyper.beta1.values) c1.push_back(1.0 - std::pow(v, t));
  for (double v : hyper.beta2.values) c2.push_back(1.0 - std::pow(v, t));

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto theta = params[i].value.mutable_data();
    auto grad = grads[i].data();
    auto m = state.first[i].mutable_data();
    auto v = state.second[i].mutable_data();
    for_each_model_run(params[i], [&](std::size_t begin, std::size_t end, std::size_t b) {
      const double lr = hyper.lr.values[b], b1 = hyper.beta1.values[b];
      const double b2 = hyper.beta2.values[b], wd = hyper.weight_decay.values[b];
      for (std::size_t k = begin; k < end; ++k) {
        const double g = grad[k] + wd * theta[k];
        m[k] = b1 * m[k] + (1.0 - b1) * g;
        v[k] = b2 * v[k] + (1.0 - b2) * g * g;
        const double m_hat = m[k] / c1[b];
        const double v_hat = v[k] / c2[b];
        theta[k] -= lr * m_hat / (std::sqrt(v_hat) + hyper.eps);
      }
    });
  }
}

void fused_adadelta_step(std::span<FusedParameter> params, std::span<const Tensor> grads,
                         OptState& state, const AdadeltaHyper& hyper) {
  const std::int64_t models = job_models(params);
  for (const HyperVector* hv : {&hyper.lr, &hyper.rho, &hyper.weight_decay}) {
    check_length(*hv, models);
  }
  check_range(hyper.lr, 0.0, 1e300, true, false);
  check_range(hyper.rho, 0.0, 1.0, true, true);
  prepare_state(params, grads, state);
  state.step += 1;

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto theta = params[i].value.mutable_data();
    auto grad = grads[i].data();
    auto square_avg = state.first[i].mutable_data();
    auto acc_delta = state.second[i].mutable_data();
    for_each_model_run(params[i], [&](std::size_t begin, std::size_t end, std::size_t b) {
      const double lr = hyper.lr.values[b], rho = hyper.rho.values[b];
      const double wd = hyper.weight_decay.values[b];
      for (std::size_t k = begin; k < end; ++k) {
        const double g = grad[k] + wd * theta[k];
        square_avg[k] = rho * square_avg[k] + (1.0 - rho) * g * g;
        const double delta =
            std::sqrt(acc_delta[k] + hyper.eps) / std::sqrt(square_avg[k] + hyper.eps) * g;
        acc_delta[k] = rho * acc_delta[k] + (1.0 - rho) * delta * delta;
        theta[k] -= lr * delta;
      }
    });
  }
}

HyperVector fused_steplr(const HyperVector& initial_lr, std::int64_t epoch,
                         std::span<const std::int64_t> periods, const HyperVector& gamma) {
  const std::size_t models = initial_lr.size();
  if (periods.size() != models || gamma.size() != models) {
    throw FusionError("StepLR period/gamma vectors must have one entry per model");
  }
  if (epoch < 0) throw ConfigError("StepLR epoch must be non-negative");
  check_range(gamma, 0.0, 1.0, true, false);
  HyperVector out{initial_lr.name, std::vector<double>(models)};
  for (std::size_t b = 0; b < models; ++b) {
    if (periods[b] < 1) {
      throw ConfigError("StepLR period must be >= 1, got " + std::to_string(periods[b]));
    }
    out.values[b] =
        initial_lr.values[b] * std::pow(gamma.values[b], static_cast<double>(epoch / periods[b]));
  }
  return out;
}

FusedOptimizer::FusedOptimizer(std::vector<FusedParameter> params, AdamHyper hyper)
    : kind_(OptimizerKind::kAdam), params_(std::move(params)), adam_(std::move(hyper)) {}

FusedOptimizer::FusedOptimizer(std::vector<FusedParameter> params, AdadeltaHyper hyper)
    : kind_(OptimizerKind::kAdadelta), params_(std::move(params)), adadelta_(std::move(hyper)) {}

void FusedOptimizer::step() {
  std::vector<Tensor> grads;
  grads.reserve(params_.size());
  for (const FusedParameter& p : params_) grads.push_back(p.value.grad());
  if (kind_ == OptimizerKind::kAdam) {
    fused_adam_step(params_, grads, state_, adam_);
  } else {
    fused_adadelta_step(params_, grads, state_, adadelta_);
  }
}

void FusedOptimizer::zero_grad() {
  for (const FusedParameter& p : params_) p.value.zero_grad();
}

void FusedOptimizer::set_lr(const HyperVector& lr) {
  (kind_ == OptimizerKind::kAdam ? adam_.lr : adadelta_.lr) = lr;
}

const HyperVector& FusedOptimizer::lr() const {
  return kind_ == OptimizerKind::kAdam ? adam_.lr : adadelta_.lr;
}

}  // namespace hfta
