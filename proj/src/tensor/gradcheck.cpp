#include "acmseg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "acmseg/autograd.hpp"

namespace acm {

namespace {

double eval_scalar(const ScalarFn& fn, std::span<const Tensor> inputs) {
  NoTrace pause;
  const Tensor out = fn(inputs);
  if (out.numel() != 1) fail(Errc::NotScalar, "grad_check function must return a scalar");
  const double v = out.item();
  if (!std::isfinite(v)) fail(Errc::NonFiniteOutput, "grad_check function returned " +
                                                         std::to_string(v));
  return v;
}

Tensor with_offset(const Tensor& t, std::int64_t i, double delta) {
  auto v = t.data<double>();
  std::vector<double> copy(v.begin(), v.end());
  copy[static_cast<std::size_t>(i)] += delta;
  return Tensor::from<double>(t.shape(), std::move(copy));
}

std::vector<std::int64_t> pick_coords(std::int64_t n, std::size_t max_coords, std::mt19937_64& rng) {
  std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  if (max_coords == 0 || idx.size() <= max_coords) return idx;
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(max_coords);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

GradCheckReport grad_check(const ScalarFn& fn, std::vector<Tensor> inputs,
                           const GradCheckOptions& opts, std::span<Parameter* const> params) {
  for (const auto& t : inputs) {
    if (t.dtype() != DType::f64) fail(Errc::DtypeMismatch, "grad_check requires f64 inputs");
  }
  for (const Parameter* p : params) {
    if (p->value.dtype() != DType::f64) {
      fail(Errc::DtypeMismatch, "grad_check requires f64 parameter " + p->name);
    }
  }

  std::vector<Tensor> input_grads;
  std::vector<Tensor> param_grads;
  {
    Tape tape;
    TapeScope scope(tape);
    std::vector<Tensor> watched;
    watched.reserve(inputs.size());
    for (const auto& t : inputs) watched.push_back(tape.watch(t));
    const Tensor out = fn(watched);
    if (out.numel() != 1) fail(Errc::NotScalar, "grad_check function must return a scalar");
    if (!std::isfinite(out.item())) fail(Errc::NonFiniteOutput, "non-finite function value");
    tape.backward(out, params);
    for (const auto& w : watched) input_grads.push_back(tape.grad(w));
    for (const Parameter* p : params) param_grads.push_back(p->grad);
  }

  GradCheckReport rep;
  std::mt19937_64 rng(opts.seed);
  auto compare = [&](double tape_g, double fd, const std::string& where) {
    const double abs_err = std::abs(tape_g - fd);
    const double rel = abs_err / std::max({std::abs(tape_g), std::abs(fd), opts.floor});
    ++rep.coords_checked;
    rep.max_abs_error = std::max(rep.max_abs_error, abs_err);
    if (rep.worst.empty() || rel > rep.max_rel_error) {
      rep.max_rel_error = rel;
      rep.worst = where;
    }
  };

  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const auto g = input_grads[k].data<double>();
    for (auto i : pick_coords(inputs[k].numel(), opts.max_coords, rng)) {
      std::vector<Tensor> probe = inputs;
      probe[k] = with_offset(inputs[k], i, opts.eps);
      const double fp = eval_scalar(fn, probe);
      probe[k] = with_offset(inputs[k], i, -opts.eps);
      const double fm = eval_scalar(fn, probe);
      compare(g[i], (fp - fm) / (2.0 * opts.eps),
              "input" + std::to_string(k) + "[" + std::to_string(i) + "]");
    }
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    const Tensor original = p.value;
    const auto g = param_grads[k].data<double>();
    for (auto i : pick_coords(original.numel(), opts.max_coords, rng)) {
      p.value = with_offset(original, i, opts.eps);
      const double fp = eval_scalar(fn, inputs);
      p.value = with_offset(original, i, -opts.eps);
      const double fm = eval_scalar(fn, inputs);
      compare(g[i], (fp - fm) / (2.0 * opts.eps), p.name + "[" + std::to_string(i) + "]");
    }
    p.value = original;
  }
  rep.passed = rep.max_rel_error < opts.tol;
  return rep;
}

}  // namespace acm
