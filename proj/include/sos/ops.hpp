#pragma once

#include <cstddef>
#include <span>

#include "sos/tensor.hpp"

// Differentiable primitives. Every op checks shapes up front and throws
// ShapeError on mismatch; results are recorded when gradients are enabled.
namespace sos::ops {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor maximum(const Tensor& a, const Tensor& b);
// a * s for a scalar tensor s (shape [] or [1]).
Tensor mul_scalar(const Tensor& a, const Tensor& s);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);
Tensor neg(const Tensor& a);

Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor exp(const Tensor& a);
// Natural log; inputs must be positive.
Tensor log(const Tensor& a);
// log(max(a, floor)); the gradient is zero where the clamp is active.
Tensor log_clamped(const Tensor& a, double floor);

// Scalar-valued reductions.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor pick(const Tensor& a, std::size_t index);

Tensor reshape(const Tensor& a, Shape shape);

// Numerically stable softmax of a rank-1 tensor. Throws DomainError on
// non-finite input.
Tensor softmax(const Tensor& logits);

// [m,k] x [k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);
// [m,k] x [k] -> [m]
Tensor matvec(const Tensor& a, const Tensor& x);
// weight [m,k], bias [m], x [k] -> weight x + bias
Tensor affine(const Tensor& weight, const Tensor& bias, const Tensor& x);

// Concatenation of rank-1 tensors.
Tensor concat(std::span<const Tensor> parts);

// input [C,H,W], weight [O,C,kh,kw], bias [O] -> [O,H',W'] with
// H' = (H + 2*padding - kh) / stride + 1.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding);

// [C,H,W] -> [C]
Tensor global_avg_pool(const Tensor& input);

}  // namespace sos::ops
