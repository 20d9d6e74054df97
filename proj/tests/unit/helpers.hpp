#pragma once

#include <cmath>
#include <vector>

#include "acmseg/gradcheck.hpp"
#include "acmseg/ops.hpp"
#include "acmseg/rng.hpp"
#include "acmseg/tensor.hpp"

namespace testutil {

inline acm::Tensor randn(acm::Shape shape, acm::Rng& rng, double sd = 1.0,
                         acm::DType dt = acm::default_dtype()) {
  std::vector<double> v(static_cast<std::size_t>(acm::numel(shape)));
  for (auto& x : v) x = rng.normal(0.0, sd);
  return acm::Tensor::from_doubles(std::move(shape), v, dt);
}

inline acm::Tensor randu(acm::Shape shape, acm::Rng& rng, double lo, double hi,
                         acm::DType dt = acm::default_dtype()) {
  std::vector<double> v(static_cast<std::size_t>(acm::numel(shape)));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return acm::Tensor::from_doubles(std::move(shape), v, dt);
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double max_abs_diff(const acm::Tensor& a, const acm::Tensor& b) {
  if (a.shape() != b.shape()) return INFINITY;
  return max_abs_diff(a.to_doubles(), b.to_doubles());
}

// Scalar probe: sum(f(x) * w) with fixed random weights so every output
// coordinate contributes a distinct gradient.
inline acm::Tensor probe(const acm::Tensor& y, std::uint64_t seed = 99) {
  acm::Rng rng(seed);
  return acm::sum(acm::mul(y, randn(y.shape(), rng, 1.0, y.dtype())));
}

}  // namespace testutil
