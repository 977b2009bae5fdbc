#include "hfta/autograd.h"

#include <algorithm>
#include <atomic>

#include "hfta/errors.h"

namespace hfta {
namespace {

thread_local std::vector<GradTape*> tape_stack;
std::atomic<std::uint64_t> next_serial{1};

}  // namespace

std::span<double> BackwardContext::grad_input(std::size_t input) const {
  detail::TensorImpl* impl = inputs_[input].impl();
  if (impl->grad.empty()) impl->grad.assign(impl->data.size(), 0.0);
  return impl->grad;
}

void GradMap::insert(const Tensor& leaf) { grads_[leaf.impl()] = leaf.grad(); }

bool GradMap::contains(const Tensor& leaf) const { return grads_.count(leaf.impl()) > 0; }

const Tensor& GradMap::at(const Tensor& leaf) const {
  auto it = grads_.find(leaf.impl());
  if (it == grads_.end()) throw TapeError("tensor received no gradient in this pass");
  return it->second;
}

GradTape::GradTape() : serial_(next_serial.fetch_add(1)) { tape_stack.push_back(this); }

GradTape::~GradTape() {
  auto it = std::find(tape_stack.begin(), tape_stack.end(), this);
  if (it != tape_stack.end()) tape_stack.erase(it);
}

GradTape* GradTape::active() { return tape_stack.empty() ? nullptr : tape_stack.back(); }

void GradTape::record(std::string_view op, std::vector<Tensor> inputs, const Tensor& output,
                      BackwardFn backward) {
  if (consumed_) throw TapeError("cannot record on a consumed tape");
  output.impl()->tape_serial = serial_;
  output.impl()->tape_node = nodes_.size();
  nodes_.push_back(Node{std::string(op), std::move(inputs), output.shared_impl(),
                        std::move(backward)});
}

GradMap GradTape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " +
                        (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
  }
  detail::TensorImpl* root = loss.impl();
  if (root->tape_serial != serial_ || root->tape_node >= nodes_.size() || consumed_) {
    throw TapeError("loss is not attached to this gradient tape (or the tape was consumed)");
  }

  root->grad.assign(1, 1.0);
  GradMap leaves;
  std::vector<Tensor> leaf_list;
  for (std::size_t i = root->tape_node + 1; i-- > 0;) {
    Node& node = nodes_[i];
    detail::TensorImpl* out = node.output.get();
    if (out->grad.empty()) continue;
    node.backward(BackwardContext(out->grad, node.inputs));
    for (const Tensor& input : node.inputs) {
      detail::TensorImpl* in = input.impl();
      if (in->requires_grad && in->tape_serial != serial_) leaf_list.push_back(input);
    }
    // Intermediate gradients are not retained.
    if (out != root) {
      out->grad.clear();
      out->grad.shrink_to_fit();
    }
  }
  for (const Tensor& leaf : leaf_list) leaves.insert(leaf);

  nodes_.clear();
  consumed_ = true;
  return leaves;
}

GradMap backward(const Tensor& loss) {
  GradTape* tape = GradTape::active();
  if (!tape || !loss.defined() || loss.impl()->tape_serial == 0) {
    if (loss.defined() && loss.numel() != 1) {
      throw ContractError("backward needs a scalar loss, got shape " + to_string(loss.shape()));
    }
    throw TapeError("loss is detached: no active gradient tape recorded it");
  }
  return tape->backward(loss);
}

Tensor make_result(std::string_view op, Shape shape, std::vector<double> data,
                   std::vector<Tensor> inputs, BackwardFn backward) {
  bool needs_grad = std::any_of(inputs.begin(), inputs.end(),
                                [](const Tensor& t) { return t.requires_grad(); });
  Tensor out(std::move(shape), std::move(data), needs_grad);
  if (needs_grad) {
    if (GradTape* tape = GradTape::active()) {
      tape->record(op, std::move(inputs), out, std::move(backward));
    }
  }
  return out;
}

}  // namespace hfta
