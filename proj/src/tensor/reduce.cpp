#include <algorithm>
#include <limits>

#include "acmseg/ops.hpp"

namespace acm {

namespace {

struct ReducePlan {
  Shape out_shape;       // keepdims layout
  Shape in_to_out;       // per input axis: output stride or 0 when reduced
  std::int64_t count = 1;  // elements folded into each output
};

ReducePlan plan_reduce(const Shape& in, std::vector<std::int64_t>& axes) {
  const auto r = static_cast<std::int64_t>(in.size());
  if (axes.empty()) {
    for (std::int64_t i = 0; i < r; ++i) axes.push_back(i);
  }
  std::vector<bool> reduced(in.size(), false);
  for (auto& a : axes) {
    if (a < 0) a += r;
    if (a < 0 || a >= r) fail(Errc::InvalidAxis, "reduce axis out of range for " + to_string(in));
    if (reduced[a]) fail(Errc::InvalidAxis, "duplicate reduce axis " + std::to_string(a));
    reduced[a] = true;
  }
  ReducePlan p;
  p.out_shape = in;
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (reduced[i]) {
      p.count *= in[i];
      p.out_shape[i] = 1;
    }
  }
  const Shape os = strides_of(p.out_shape);
  p.in_to_out.resize(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) p.in_to_out[i] = reduced[i] ? 0 : os[i];
  return p;
}

// Calls f(in_flat, out_flat) in input row-major order.
template <class F>
void for_each_reduce(const Shape& in, const Shape& map, F&& f) {
  const std::int64_t total = numel(in);
  const std::size_t r = in.size();
  std::vector<std::int64_t> idx(r, 0);
  std::int64_t o = 0;
  for (std::int64_t i = 0; i < total; ++i) {
    f(i, o);
    for (std::int64_t d = static_cast<std::int64_t>(r) - 1; d >= 0; --d) {
      ++idx[d];
      o += map[d];
      if (idx[d] < in[d]) break;
      o -= map[d] * in[d];
      idx[d] = 0;
    }
  }
}

Shape squeeze_reduced(const Shape& in, const std::vector<std::int64_t>& axes) {
  Shape out;
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(in.size()); ++i) {
    if (std::find(axes.begin(), axes.end(), i) == axes.end()) out.push_back(in[i]);
  }
  if (out.empty()) out.push_back(1);
  return out;
}

}  // namespace

Tensor reduce(ReduceOp op, const Tensor& x, std::vector<std::int64_t> axes, bool keepdims) {
  const ReducePlan plan = plan_reduce(x.shape(), axes);
  const Shape final_shape = keepdims ? plan.out_shape : squeeze_reduced(x.shape(), axes);
  std::vector<std::int64_t> argmax;

  Tensor out = dispatch(x.dtype(), [&]<typename T>() {
    auto px = x.data<T>();
    const auto n_out = static_cast<std::size_t>(numel(plan.out_shape));
    std::vector<T> acc(n_out, op == ReduceOp::max ? -std::numeric_limits<T>::infinity() : T(0));
    if (op == ReduceOp::max) {
      argmax.assign(n_out, -1);
      for_each_reduce(x.shape(), plan.in_to_out, [&](std::int64_t i, std::int64_t o) {
        if (argmax[o] < 0 || px[i] > acc[o]) {
          acc[o] = px[i];
          argmax[o] = i;
        }
      });
    } else {
      for_each_reduce(x.shape(), plan.in_to_out,
                      [&](std::int64_t i, std::int64_t o) { acc[o] += px[i]; });
      if (op == ReduceOp::mean) {
        const T inv = T(1) / static_cast<T>(plan.count);
        for (auto& v : acc) v *= inv;
      }
    }
    return Tensor::from<T>(final_shape, std::move(acc));
  });

  if (!needs_grad({&x})) return out;
  BackwardFn fn = [op, plan, in_shape = x.shape(), argmax = std::move(argmax)](
                      const Tensor& g, GradSink& s) {
    Tensor gx = dispatch(g.dtype(), [&]<typename T>() {
      auto pg = g.data<T>();
      std::vector<T> r(static_cast<std::size_t>(numel(in_shape)), T(0));
      if (op == ReduceOp::max) {
        for (std::size_t o = 0; o < argmax.size(); ++o) r[argmax[o]] += pg[o];
      } else {
        const T k = op == ReduceOp::mean ? T(1) / static_cast<T>(plan.count) : T(1);
        for_each_reduce(in_shape, plan.in_to_out,
                        [&](std::int64_t i, std::int64_t o) { r[i] = pg[o] * k; });
      }
      return Tensor::from<T>(in_shape, std::move(r));
    });
    s.add(0, std::move(gx));
  };
  record(out, {&x}, std::move(fn), "reduce");
  return out;
}

}  // namespace acm
