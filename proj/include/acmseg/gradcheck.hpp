#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "acmseg/tensor.hpp"

namespace acm {

struct GradCheckOptions {
  double eps = 1e-5;
  double tol = 1e-6;
  // Relative error is |tape - fd| / max(|tape|, |fd|, floor).
  double floor = 1e-2;
  // 0 checks every coordinate; otherwise a seeded sample of this many per tensor.
  std::size_t max_coords = 0;
  std::uint64_t seed = 7;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t coords_checked = 0;
  std::string worst;  // "<input or parameter>[flat index]"
  bool passed = false;
};

using ScalarFn = std::function<Tensor(std::span<const Tensor>)>;

// Compares tape gradients against central differences (f(x+eps)-f(x-eps))/(2 eps)
// for every coordinate of `inputs` and of `params`. `fn` receives tracked
// aliases of `inputs` and must read parameters through acm::use(). Requires
// f64 tensors; throws NonFiniteOutput when fn produces a non-finite value.
GradCheckReport grad_check(const ScalarFn& fn, std::vector<Tensor> inputs,
                           const GradCheckOptions& opts = {},
                           std::span<Parameter* const> params = {});

}  // namespace acm
