#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "hfta/tensor.h"

namespace hfta {

// Handed to a node's backward rule: the gradient flowing into the node's
// output, and lazily-allocated accumulators for each input.
class BackwardContext {
 public:
  BackwardContext(std::span<const double> grad_output, std::span<const Tensor> inputs)
      : grad_output_(grad_output), inputs_(inputs) {}

  std::span<const double> grad_output() const { return grad_output_; }
  bool needs(std::size_t input) const { return inputs_[input].requires_grad(); }
  // Accumulator for d(loss)/d(input); zero-initialised on first access.
  std::span<double> grad_input(std::size_t input) const;

 private:
  std::span<const double> grad_output_;
  std::span<const Tensor> inputs_;
};

using BackwardFn = std::function<void(const BackwardContext&)>;

// Leaf tensor -> gradient, as produced by one backward pass.
class GradMap {
 public:
  void insert(const Tensor& leaf);
  bool contains(const Tensor& leaf) const;
  const Tensor& at(const Tensor& leaf) const;
  std::size_t size() const { return grads_.size(); }

 private:
  std::unordered_map<const detail::TensorImpl*, Tensor> grads_;
};

// Append-only record of differentiable ops for one training step. A tape
// becomes the thread's active tape on construction and stops being active
// on destruction. Backward consumes it.
class GradTape {
 public:
  GradTape();
  ~GradTape();
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  static GradTape* active();

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  void record(std::string_view op, std::vector<Tensor> inputs, const Tensor& output,
              BackwardFn backward);

  // Reverse-mode sweep from a scalar loss. Every requires_grad leaf reached
  // from the loss accumulates into its grad buffer.
  GradMap backward(const Tensor& loss);

 private:
  struct Node {
    std::string op;
    std::vector<Tensor> inputs;
    std::shared_ptr<detail::TensorImpl> output;
    BackwardFn backward;
  };

  std::uint64_t serial_;
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// backward() on whichever tape produced `loss`; it must be the active tape.
GradMap backward(const Tensor& loss);

// Builds an op result: output requires grad iff any input does, and the
// node is recorded when a tape is active.
Tensor make_result(std::string_view op, Shape shape, std::vector<double> data,
                   std::vector<Tensor> inputs, BackwardFn backward);

}  // namespace hfta
