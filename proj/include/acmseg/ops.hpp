#pragma once

#include <cstdint>
#include <initializer_list>
#include <optional>
#include <span>
#include <vector>

#include "acmseg/autograd.hpp"
#include "acmseg/tensor.hpp"

namespace acm {

// True when the active tape will record an op over these inputs.
bool needs_grad(std::initializer_list<const Tensor*> inputs) noexcept;

Shape broadcast_shapes(const Shape& a, const Shape& b);
// Sums `g` down to `shape` (inverse of broadcasting). Untracked.
Tensor sum_to(const Tensor& g, const Shape& shape);

enum class BinaryOp { add, sub, mul, div };
enum class UnaryOp { exp, log, softplus, sigmoid, relu, silu, neg };

Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b);
Tensor elementwise(UnaryOp op, const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// Exact-zero denominators are rejected for f64 operands.
Tensor div(const Tensor& a, const Tensor& b);

Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor silu(const Tensor& x);
Tensor neg(const Tensor& x);

Tensor scale(const Tensor& x, double s);
Tensor add_scalar(const Tensor& x, double s);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }

enum class ReduceOp { sum, mean, max };

// Empty `axes` reduces over every axis. Summation runs sequentially over the
// flat index; max backpropagates to the first maximal element.
Tensor reduce(ReduceOp op, const Tensor& x, std::vector<std::int64_t> axes = {},
              bool keepdims = false);
inline Tensor sum(const Tensor& x, std::vector<std::int64_t> axes = {}, bool keepdims = false) {
  return reduce(ReduceOp::sum, x, std::move(axes), keepdims);
}
inline Tensor mean(const Tensor& x, std::vector<std::int64_t> axes = {}, bool keepdims = false) {
  return reduce(ReduceOp::mean, x, std::move(axes), keepdims);
}
inline Tensor max(const Tensor& x, std::vector<std::int64_t> axes = {}, bool keepdims = false) {
  return reduce(ReduceOp::max, x, std::move(axes), keepdims);
}

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::int64_t>& order);
Tensor concat(std::span<const Tensor> parts, std::int64_t axis);
Tensor slice(const Tensor& x, std::int64_t axis, std::int64_t start, std::int64_t length);
// Stacks equally shaped tensors along a new leading axis.
Tensor stack(std::span<const Tensor> parts);

// Log-softmax over `axis`, max-shifted.
Tensor log_softmax(const Tensor& x, std::int64_t axis);
Tensor softmax(const Tensor& x, std::int64_t axis);

// Row-major matrix product of the trailing two axes; a [M,K] x b [K,N].
Tensor matmul(const Tensor& a, const Tensor& b);

}  // namespace acm
