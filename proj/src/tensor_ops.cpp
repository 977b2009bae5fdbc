#include "hfta/tensor_ops.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hfta/autograd.h"
#include "hfta/errors.h"
#include "hfta/kernel_counter.h"

namespace hfta {
namespace {

using Index = std::int64_t;

// c[M,N] += a[M,K] . b[K,N]
void gemm_acc(Index m, Index k, Index n, const double* a, const double* b, double* c) {
  for (Index i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (Index p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      const double* brow = b + p * n;
      for (Index j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// da[M,K] += dc[M,N] . b[K,N]^T
void gemm_grad_a(Index m, Index k, Index n, const double* dc, const double* b, double* da) {
  for (Index i = 0; i < m; ++i) {
    for (Index p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      const double* dcrow = dc + i * n;
      double acc[4] = {0.0, 0.0, 0.0, 0.0};
      Index j = 0;
      for (; j + 4 <= n; j += 4) {
        acc[0] += dcrow[j] * brow[j];
        acc[1] += dcrow[j + 1] * brow[j + 1];
        acc[2] += dcrow[j + 2] * brow[j + 2];
        acc[3] += dcrow[j + 3] * brow[j + 3];
      }
      for (; j < n; ++j) acc[0] += dcrow[j] * brow[j];
      da[i * k + p] += (acc[0] + acc[1]) + (acc[2] + acc[3]);
    }
  }
}

// db[K,N] += a[M,K]^T . dc[M,N]
void gemm_grad_b(Index m, Index k, Index n, const double* a, const double* dc, double* db) {
  for (Index i = 0; i < m; ++i) {
    const double* dcrow = dc + i * n;
    for (Index p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      double* dbrow = db + p * n;
      for (Index j = 0; j < n; ++j) dbrow[j] += av * dcrow[j];
    }
  }
}

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.shape().size() != rank) {
    throw DimensionError(std::string(what) + " expects rank " + std::to_string(rank) +
                         ", got " + to_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": shape mismatch " + to_string(a.shape()) +
                         " vs " + to_string(b.shape()));
  }
}

bool is_binary(Elementwise kind) { return kind == Elementwise::kAdd || kind == Elementwise::kMul; }

const char* kernel_name(Elementwise kind) {
  switch (kind) {
    case Elementwise::kAdd: return "add";
    case Elementwise::kMul: return "mul";
    case Elementwise::kRelu: return "relu";
    case Elementwise::kRelu6: return "relu6";
    case Elementwise::kLeakyRelu: return "leaky_relu";
    case Elementwise::kTanh: return "tanh";
  }
  return "elementwise";
}

std::int64_t normalize_axis(std::int64_t axis, std::size_t rank) {
  const auto r = static_cast<std::int64_t>(rank);
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(rank));
  }
  return axis;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const Index m = a.size(0), k = a.size(1), n = b.size(1);
  if (b.size(0) != k) {
    throw DimensionError("matmul: inner dimensions differ for " + to_string(a.shape()) + " x " +
                         to_string(b.shape()));
  }
  KernelCounter::record("matmul");
  std::vector<double> out(static_cast<std::size_t>(m * n), 0.0);
  gemm_acc(m, k, n, a.data().data(), b.data().data(), out.data());
  return make_result("matmul", {m, n}, std::move(out), {a, b},
                     [a, b, m, k, n](const BackwardContext& ctx) {
                       const double* g = ctx.grad_output().data();
                       if (ctx.needs(0)) gemm_grad_a(m, k, n, g, b.data().data(), ctx.grad_input(0).data());
                       if (ctx.needs(1)) gemm_grad_b(m, k, n, a.data().data(), g, ctx.grad_input(1).data());
                     });
}

Tensor addmm(const Tensor& bias, const Tensor& x, const Tensor& w) {
  require_rank(x, 2, "addmm");
  require_rank(w, 2, "addmm");
  const Index n = x.size(0), fx = x.size(1), fy = w.size(1);
  if (w.size(0) != fx) {
    throw DimensionError("addmm: inner dimensions differ for " + to_string(x.shape()) + " x " +
                         to_string(w.shape()));
  }
  if (bias.numel() != fy) {
    throw DimensionError("addmm: bias " + to_string(bias.shape()) + " does not match " +
                         std::to_string(fy) + " output features");
  }
  KernelCounter::record("addmm");
  std::vector<double> out(static_cast<std::size_t>(n * fy), 0.0);
  gemm_acc(n, fx, fy, x.data().data(), w.data().data(), out.data());
  auto bd = bias.data();
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < fy; ++j) out[i * fy + j] += bd[j];
  return make_result("addmm", {n, fy}, std::move(out), {bias, x, w},
                     [x, w, n, fx, fy](const BackwardContext& ctx) {
                       const double* g = ctx.grad_output().data();
                       if (ctx.needs(0)) {
                         auto gb = ctx.grad_input(0);
                         for (Index i = 0; i < n; ++i)
                           for (Index j = 0; j < fy; ++j) gb[j] += g[i * fy + j];
                       }
                       if (ctx.needs(1)) gemm_grad_a(n, fx, fy, g, w.data().data(), ctx.grad_input(1).data());
                       if (ctx.needs(2)) gemm_grad_b(n, fx, fy, x.data().data(), g, ctx.grad_input(2).data());
                     });
}

Tensor baddbmm(const Tensor& bias, const Tensor& x, const Tensor& w) {
  require_rank(bias, 3, "baddbmm bias");
  require_rank(x, 3, "baddbmm input");
  require_rank(w, 3, "baddbmm weight");
  const Index batch = x.size(0), n = x.size(1), fx = x.size(2), fy = w.size(2);
  if (w.size(0) != batch || bias.size(0) != batch) {
    throw DimensionError("baddbmm: batch extents differ: bias " + to_string(bias.shape()) +
                         ", x " + to_string(x.shape()) + ", w " + to_string(w.shape()));
  }
  if (w.size(1) != fx) {
    throw DimensionError("baddbmm: inner dimensions differ for " + to_string(x.shape()) + " x " +
                         to_string(w.shape()));
  }
  if (bias.size(1) != 1 || bias.size(2) != fy) {
    throw DimensionError("baddbmm: bias must be [B,1," + std::to_string(fy) + "], got " +
                         to_string(bias.shape()));
  }
  KernelCounter::record("baddbmm");
  std::vector<double> out(static_cast<std::size_t>(batch * n * fy), 0.0);
  const double* xd = x.data().data();
  const double* wd = w.data().data();
  const double* bd = bias.data().data();
  for (Index b = 0; b < batch; ++b) {
    double* ob = out.data() + b * n * fy;
    gemm_acc(n, fx, fy, xd + b * n * fx, wd + b * fx * fy, ob);
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < fy; ++j) ob[i * fy + j] += bd[b * fy + j];
  }
  return make_result(
      "baddbmm", {batch, n, fy}, std::move(out), {bias, x, w},
      [x, w, batch, n, fx, fy](const BackwardContext& ctx) {
        const double* g = ctx.grad_output().data();
        for (Index b = 0; b < batch; ++b) {
          const double* gb = g + b * n * fy;
          if (ctx.needs(0)) {
            double* dbias = ctx.grad_input(0).data() + b * fy;
            for (Index i = 0; i < n; ++i)
              for (Index j = 0; j < fy; ++j) dbias[j] += gb[i * fy + j];
          }
          if (ctx.needs(1)) {
            gemm_grad_a(n, fx, fy, gb, w.data().data() + b * fx * fy,
                        ctx.grad_input(1).data() + b * n * fx);
          }
          if (ctx.needs(2)) {
            gemm_grad_b(n, fx, fy, x.data().data() + b * n * fx, gb,
                        ctx.grad_input(2).data() + b * fx * fy);
          }
        }
      });
}

Tensor elementwise(Elementwise kind, std::span<const Tensor> operands, double alpha) {
  const std::size_t arity = is_binary(kind) ? 2 : 1;
  if (operands.size() != arity) {
    throw ContractError(std::string(kernel_name(kind)) + " takes " + std::to_string(arity) +
                        " operand(s), got " + std::to_string(operands.size()));
  }
  const Tensor& x = operands[0];
  if (arity == 2) require_same_shape(operands[0], operands[1], kernel_name(kind));
  KernelCounter::record(kernel_name(kind));

  auto xd = x.data();
  std::vector<double> out(xd.size());
  switch (kind) {
    case Elementwise::kAdd: {
      auto yd = operands[1].data();
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] + yd[i];
      break;
    }
    case Elementwise::kMul: {
      auto yd = operands[1].data();
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * yd[i];
      break;
    }
    case Elementwise::kRelu:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] > 0.0 ? xd[i] : 0.0;
      break;
    case Elementwise::kRelu6:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(std::max(xd[i], 0.0), 6.0);
      break;
    case Elementwise::kLeakyRelu:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] > 0.0 ? xd[i] : alpha * xd[i];
      break;
    case Elementwise::kTanh:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(xd[i]);
      break;
  }

  std::vector<Tensor> inputs(operands.begin(), operands.end());
  BackwardFn fn = [kind, inputs, alpha](const BackwardContext& ctx) {
    auto g = ctx.grad_output();
    auto xd = inputs[0].data();
    switch (kind) {
      case Elementwise::kAdd:
        for (std::size_t k = 0; k < 2; ++k) {
          if (!ctx.needs(k)) continue;
          auto gi = ctx.grad_input(k);
          for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
        }
        break;
      case Elementwise::kMul: {
        auto yd = inputs[1].data();
        if (ctx.needs(0)) {
          auto gi = ctx.grad_input(0);
          for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * yd[i];
        }
        if (ctx.needs(1)) {
          auto gi = ctx.grad_input(1);
          for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * xd[i];
        }
        break;
      }
      case Elementwise::kRelu: {
        auto gi = ctx.grad_input(0);
        for (std::size_t i = 0; i < g.size(); ++i) gi[i] += xd[i] > 0.0 ? g[i] : 0.0;
        break;
      }
      case Elementwise::kRelu6: {
        auto gi = ctx.grad_input(0);
        for (std::size_t i = 0; i < g.size(); ++i)
          gi[i] += (xd[i] > 0.0 && xd[i] < 6.0) ? g[i] : 0.0;
        break;
      }
      case Elementwise::kLeakyRelu: {
        auto gi = ctx.grad_input(0);
        for (std::size_t i = 0; i < g.size(); ++i) gi[i] += xd[i] > 0.0 ? g[i] : alpha * g[i];
        break;
      }
      case Elementwise::kTanh: {
        auto gi = ctx.grad_input(0);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double y = std::tanh(xd[i]);
          gi[i] += g[i] * (1.0 - y * y);
        }
        break;
      }
    }
  };
  return make_result(kernel_name(kind), x.shape(), std::move(out), std::move(inputs),
                     std::move(fn));
}

Tensor add(const Tensor& a, const Tensor& b) {
  const Tensor ops[] = {a, b};
  return elementwise(Elementwise::kAdd, ops);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const Tensor ops[] = {a, b};
  return elementwise(Elementwise::kMul, ops);
}

Tensor relu(const Tensor& x) { return elementwise(Elementwise::kRelu, std::span(&x, 1)); }
Tensor relu6(const Tensor& x) { return elementwise(Elementwise::kRelu6, std::span(&x, 1)); }
Tensor leaky_relu(const Tensor& x, double negative_slope) {
  return elementwise(Elementwise::kLeakyRelu, std::span(&x, 1), negative_slope);
}
Tensor tanh(const Tensor& x) { return elementwise(Elementwise::kTanh, std::span(&x, 1)); }

Tensor scale(const Tensor& x, double factor) {
  KernelCounter::record("scale");
  auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * factor;
  return make_result("scale", x.shape(), std::move(out), {x},
                     [factor](const BackwardContext& ctx) {
                       auto g = ctx.grad_output();
                       auto gi = ctx.grad_input(0);
                       for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * factor;
                     });
}

Tensor sum(const Tensor& x) {
  KernelCounter::record("sum");
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  return make_result("sum", {1}, {acc}, {x}, [](const BackwardContext& ctx) {
    const double g = ctx.grad_output()[0];
    for (double& gi : ctx.grad_input(0)) gi += g;
  });
}

Tensor mean(const Tensor& x) {
  KernelCounter::record("mean");
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  const auto n = static_cast<double>(x.numel());
  return make_result("mean", {1}, {acc / n}, {x}, [n](const BackwardContext& ctx) {
    const double g = ctx.grad_output()[0] / n;
    for (double& gi : ctx.grad_input(0)) gi += g;
  });
}

Tensor reshape(const Tensor& x, const Shape& shape) {
  if (hfta::numel(shape) != x.numel()) {
    throw DimensionError("reshape " + to_string(x.shape()) + " -> " + to_string(shape) +
                         " changes the element count");
  }
  auto xd = x.data();
  return make_result("reshape", shape, std::vector<double>(xd.begin(), xd.end()), {x},
                     [](const BackwardContext& ctx) {
                       auto g = ctx.grad_output();
                       auto gi = ctx.grad_input(0);
                       for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
                     });
}

Tensor concat(std::span<const Tensor> tensors, std::int64_t axis) {
  if (tensors.empty()) throw ContractError("concat of an empty list");
  const Shape& first = tensors[0].shape();
  axis = normalize_axis(axis, first.size());
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const Tensor& t : tensors) {
    const Shape& s = t.shape();
    bool ragged = s.size() != first.size();
    for (std::size_t d = 0; !ragged && d < s.size(); ++d) {
      ragged = static_cast<std::int64_t>(d) != axis && s[d] != first[d];
    }
    if (ragged) {
      throw DimensionError("concat along axis " + std::to_string(axis) + ": " +
                           to_string(first) + " vs " + to_string(s));
    }
    out_shape[axis] += s[axis];
  }
  KernelCounter::record("concat");
  Index outer = 1, inner = 1;
  for (std::int64_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];

  std::vector<double> out(static_cast<std::size_t>(hfta::numel(out_shape)));
  std::vector<Index> widths;
  for (const Tensor& t : tensors) widths.push_back(t.size(axis) * inner);
  const Index row = out_shape[axis] * inner;
  Index offset = 0;
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    auto src = tensors[k].data();
    for (Index o = 0; o < outer; ++o) {
      std::copy_n(src.begin() + o * widths[k], widths[k], out.begin() + o * row + offset);
    }
    offset += widths[k];
  }
  std::vector<Tensor> inputs(tensors.begin(), tensors.end());
  return make_result("concat", out_shape, std::move(out), inputs,
                     [widths, outer, row](const BackwardContext& ctx) {
                       auto g = ctx.grad_output();
                       Index offset = 0;
                       for (std::size_t k = 0; k < widths.size(); ++k) {
                         if (ctx.needs(k)) {
                           auto gi = ctx.grad_input(k);
                           for (Index o = 0; o < outer; ++o)
                             for (Index j = 0; j < widths[k]; ++j)
                               gi[o * widths[k] + j] += g[o * row + offset + j];
                         }
                         offset += widths[k];
                       }
                     });
}

std::vector<Tensor> split(const Tensor& x, std::int64_t axis,
                          std::span<const std::int64_t> extents) {
  const Shape& s = x.shape();
  axis = normalize_axis(axis, s.size());
  Index total = 0;
  for (Index e : extents) {
    if (e <= 0) throw DimensionError("split extents must be positive");
    total += e;
  }
  if (total != s[axis]) {
    throw DimensionError("split extents sum to " + std::to_string(total) + " but axis " +
                         std::to_string(axis) + " of " + to_string(s) + " has extent " +
                         std::to_string(s[axis]));
  }
  Index outer = 1, inner = 1;
  for (std::int64_t d = 0; d < axis; ++d) outer *= s[d];
  for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
  const Index row = s[axis] * inner;

  std::vector<Tensor> parts;
  Index offset = 0;
  for (Index e : extents) {
    Shape part_shape = s;
    part_shape[axis] = e;
    std::vector<std::size_t> index;
    index.reserve(static_cast<std::size_t>(outer * e * inner));
    for (Index o = 0; o < outer; ++o)
      for (Index j = 0; j < e * inner; ++j)
        index.push_back(static_cast<std::size_t>(o * row + offset + j));
    parts.push_back(gather(x, part_shape, std::move(index)));
    offset += e * inner;
  }
  return parts;
}

Tensor gather(const Tensor& x, const Shape& out_shape, std::vector<std::size_t> index) {
  if (static_cast<std::int64_t>(index.size()) != hfta::numel(out_shape)) {
    throw DimensionError("gather: index count does not match " + to_string(out_shape));
  }
  auto xd = x.data();
  std::vector<double> out(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= xd.size()) throw RangeError("gather index out of range");
    out[i] = xd[index[i]];
  }
  KernelCounter::record("gather");
  return make_result("gather", out_shape, std::move(out), {x},
                     [index = std::move(index)](const BackwardContext& ctx) {
                       auto g = ctx.grad_output();
                       auto gi = ctx.grad_input(0);
                       for (std::size_t i = 0; i < index.size(); ++i) gi[index[i]] += g[i];
                     });
}

}  // namespace hfta
