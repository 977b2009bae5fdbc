#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "hfta/tensor.h"

namespace hfta {

// [M,K] x [K,N] -> [M,N]
Tensor matmul(const Tensor& a, const Tensor& b);

// x[N,Fx] . w[Fx,Fy] + bias[Fy]; the serial Linear kernel.
Tensor addmm(const Tensor& bias, const Tensor& x, const Tensor& w);

// out[b] = x[b] . w[b] + bias[b] (bias row broadcast over N); the fused
// Linear kernel. bias: [B,1,Fy], x: [B,N,Fx], w: [B,Fx,Fy].
Tensor baddbmm(const Tensor& bias, const Tensor& x, const Tensor& w);

enum class Elementwise { kAdd, kMul, kRelu, kRelu6, kLeakyRelu, kTanh };

// Binary kinds take two same-shape operands; activations take one.
// `alpha` is the LeakyReLU negative slope.
Tensor elementwise(Elementwise kind, std::span<const Tensor> operands, double alpha = 0.01);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& x);
Tensor relu6(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double negative_slope = 0.01);
Tensor tanh(const Tensor& x);

Tensor scale(const Tensor& x, double factor);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Row-major reinterpretation (a copy); element count must match.
Tensor reshape(const Tensor& x, const Shape& shape);

Tensor concat(std::span<const Tensor> tensors, std::int64_t axis);
std::vector<Tensor> split(const Tensor& x, std::int64_t axis,
                          std::span<const std::int64_t> extents);

// out.flat[i] = x.flat[index[i]]. Indices may repeat (the backward pass
// accumulates) or skip elements. Basis for layout adapters and replication.
Tensor gather(const Tensor& x, const Shape& out_shape, std::vector<std::size_t> index);

}  // namespace hfta
