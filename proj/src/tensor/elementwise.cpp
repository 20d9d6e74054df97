#include <algorithm>
#include <cmath>

#include "acmseg/ops.hpp"

namespace acm {

bool needs_grad(std::initializer_list<const Tensor*> inputs) noexcept {
  if (active_tape() == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t != nullptr && t->defined() && t->tracked()) return true;
  }
  return false;
}

Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    const std::int64_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::int64_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      fail(Errc::ShapeMismatch, "cannot broadcast " + to_string(a) + " with " + to_string(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

namespace {

// Strides of `in` viewed inside `out` after left-padding; broadcast dims get 0.
Shape broadcast_strides(const Shape& in, const Shape& out) {
  const std::size_t r = out.size();
  Shape padded(r, 1);
  std::copy(in.begin(), in.end(), padded.begin() + static_cast<std::ptrdiff_t>(r - in.size()));
  Shape s = strides_of(padded);
  for (std::size_t i = 0; i < r; ++i) {
    if (padded[i] == 1 && out[i] != 1) s[i] = 0;
  }
  return s;
}

// Visits (out_index, a_offset, b_offset) in row-major order of `out`.
template <class F>
void for_each_broadcast(const Shape& out, const Shape& sa, const Shape& sb, F&& f) {
  const std::int64_t total = numel(out);
  if (out.empty()) {
    f(0, 0, 0);
    return;
  }
  const std::size_t r = out.size();
  const std::int64_t inner = out[r - 1];
  const std::int64_t ia = sa[r - 1];
  const std::int64_t ib = sb[r - 1];
  std::vector<std::int64_t> idx(r, 0);
  std::int64_t oa = 0;
  std::int64_t ob = 0;
  for (std::int64_t base = 0; base < total; base += inner) {
    for (std::int64_t j = 0; j < inner; ++j) f(base + j, oa + j * ia, ob + j * ib);
    for (std::int64_t d = static_cast<std::int64_t>(r) - 2; d >= 0; --d) {
      ++idx[d];
      oa += sa[d];
      ob += sb[d];
      if (idx[d] < out[d]) break;
      oa -= sa[d] * out[d];
      ob -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

template <class T, class F>
Tensor binary_kernel(const Tensor& a, const Tensor& b, F f) {
  auto pa = a.data<T>();
  auto pb = b.data<T>();
  if (a.shape() == b.shape()) {
    std::vector<T> out(pa.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(pa[i], pb[i]);
    return Tensor::from<T>(a.shape(), std::move(out));
  }
  Shape shape = broadcast_shapes(a.shape(), b.shape());
  std::vector<T> out(static_cast<std::size_t>(numel(shape)));
  const Shape sa = broadcast_strides(a.shape(), shape);
  const Shape sb = broadcast_strides(b.shape(), shape);
  for_each_broadcast(shape, sa, sb, [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
    out[o] = f(pa[ia], pb[ib]);
  });
  return Tensor::from<T>(std::move(shape), std::move(out));
}

template <class T, class F>
Tensor unary_kernel(const Tensor& x, F f) {
  auto px = x.data<T>();
  std::vector<T> out(px.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(px[i]);
  return Tensor::from<T>(x.shape(), std::move(out));
}

template <class T>
T sigmoid_scalar(T x) {
  if (x >= 0) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <class T>
T softplus_scalar(T x) {
  return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
}

}  // namespace

Tensor sum_to(const Tensor& g, const Shape& shape) {
  if (g.shape() == shape) return g;
  broadcast_shapes(shape, g.shape());
  return dispatch(g.dtype(), [&]<typename T>() {
    auto pg = g.data<T>();
    std::vector<T> out(static_cast<std::size_t>(numel(shape)), T(0));
    const Shape so = broadcast_strides(shape, g.shape());
    const Shape zero(g.shape().size(), 0);
    for_each_broadcast(g.shape(), so, zero, [&](std::int64_t i, std::int64_t o, std::int64_t) {
      out[o] += pg[i];
    });
    return Tensor::from<T>(shape, std::move(out));
  });
}

Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b) {
  check_same_dtype(a, b, "elementwise");
  Tensor out = dispatch(a.dtype(), [&]<typename T>() {
    switch (op) {
      case BinaryOp::add: return binary_kernel<T>(a, b, [](T x, T y) { return x + y; });
      case BinaryOp::sub: return binary_kernel<T>(a, b, [](T x, T y) { return x - y; });
      case BinaryOp::mul: return binary_kernel<T>(a, b, [](T x, T y) { return x * y; });
      case BinaryOp::div:
        if constexpr (std::is_same_v<T, double>) {
          for (double v : b.data<double>()) {
            if (v == 0.0) fail(Errc::DivisionByZero, "exact-zero denominator in f64 div");
          }
        }
        return binary_kernel<T>(a, b, [](T x, T y) { return x / y; });
    }
    return Tensor();
  });
  if (!needs_grad({&a, &b})) return out;
  BackwardFn fn;
  switch (op) {
    case BinaryOp::add:
      fn = [sa = a.shape(), sb = b.shape()](const Tensor& g, GradSink& s) {
        if (s.wants(0)) s.add(0, sum_to(g, sa));
        if (s.wants(1)) s.add(1, sum_to(g, sb));
      };
      break;
    case BinaryOp::sub:
      fn = [sa = a.shape(), sb = b.shape()](const Tensor& g, GradSink& s) {
        if (s.wants(0)) s.add(0, sum_to(g, sa));
        if (s.wants(1)) s.add(1, neg(sum_to(g, sb)));
      };
      break;
    case BinaryOp::mul:
      fn = [a = a.detach(), b = b.detach()](const Tensor& g, GradSink& s) {
        if (s.wants(0)) s.add(0, sum_to(mul(g, b), a.shape()));
        if (s.wants(1)) s.add(1, sum_to(mul(g, a), b.shape()));
      };
      break;
    case BinaryOp::div:
      fn = [a = a.detach(), b = b.detach()](const Tensor& g, GradSink& s) {
        const Tensor gb = div(g, b);
        if (s.wants(0)) s.add(0, sum_to(gb, a.shape()));
        if (s.wants(1)) s.add(1, sum_to(neg(div(mul(gb, a), b)), b.shape()));
      };
      break;
  }
  record(out, {&a, &b}, std::move(fn), "binary");
  return out;
}

Tensor elementwise(UnaryOp op, const Tensor& x) {
  Tensor out = dispatch(x.dtype(), [&]<typename T>() {
    switch (op) {
      case UnaryOp::exp: return unary_kernel<T>(x, [](T v) { return std::exp(v); });
      case UnaryOp::log: return unary_kernel<T>(x, [](T v) { return std::log(v); });
      case UnaryOp::softplus: return unary_kernel<T>(x, [](T v) { return softplus_scalar(v); });
      case UnaryOp::sigmoid: return unary_kernel<T>(x, [](T v) { return sigmoid_scalar(v); });
      case UnaryOp::relu: return unary_kernel<T>(x, [](T v) { return v > T(0) ? v : T(0); });
      case UnaryOp::silu:
        return unary_kernel<T>(x, [](T v) { return v * sigmoid_scalar(v); });
      case UnaryOp::neg: return unary_kernel<T>(x, [](T v) { return -v; });
    }
    return Tensor();
  });
  if (!needs_grad({&x})) return out;
  BackwardFn fn = [op, x = x.detach(), y = out.detach()](const Tensor& g, GradSink& s) {
    Tensor gx = dispatch(x.dtype(), [&]<typename T>() {
      auto px = x.data<T>();
      auto py = y.data<T>();
      auto pg = g.data<T>();
      std::vector<T> r(px.size());
      for (std::size_t i = 0; i < r.size(); ++i) {
        T d = 0;
        switch (op) {
          case UnaryOp::exp: d = py[i]; break;
          case UnaryOp::log: d = T(1) / px[i]; break;
          case UnaryOp::softplus: d = sigmoid_scalar(px[i]); break;
          case UnaryOp::sigmoid: d = py[i] * (T(1) - py[i]); break;
          case UnaryOp::relu: d = px[i] > T(0) ? T(1) : T(0); break;
          case UnaryOp::silu: {
            const T sg = sigmoid_scalar(px[i]);
            d = sg * (T(1) + px[i] * (T(1) - sg));
            break;
          }
          case UnaryOp::neg: d = T(-1); break;
        }
        r[i] = pg[i] * d;
      }
      return Tensor::from<T>(x.shape(), std::move(r));
    });
    s.add(0, std::move(gx));
  };
  record(out, {&x}, std::move(fn), "unary");
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::mul, a, b); }
Tensor div(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::div, a, b); }
Tensor exp(const Tensor& x) { return elementwise(UnaryOp::exp, x); }
Tensor log(const Tensor& x) { return elementwise(UnaryOp::log, x); }
Tensor softplus(const Tensor& x) { return elementwise(UnaryOp::softplus, x); }
Tensor sigmoid(const Tensor& x) { return elementwise(UnaryOp::sigmoid, x); }
Tensor relu(const Tensor& x) { return elementwise(UnaryOp::relu, x); }
Tensor silu(const Tensor& x) { return elementwise(UnaryOp::silu, x); }
Tensor neg(const Tensor& x) { return elementwise(UnaryOp::neg, x); }

Tensor scale(const Tensor& x, double s) {
  Tensor out = dispatch(x.dtype(), [&]<typename T>() {
    const T k = static_cast<T>(s);
    return unary_kernel<T>(x, [k](T v) { return v * k; });
  });
  if (!needs_grad({&x})) return out;
  record(out, {&x}, [s](const Tensor& g, GradSink& sink) { sink.add(0, scale(g, s)); }, "scale");
  return out;
}

Tensor add_scalar(const Tensor& x, double s) {
  Tensor out = dispatch(x.dtype(), [&]<typename T>() {
    const T k = static_cast<T>(s);
    return unary_kernel<T>(x, [k](T v) { return v + k; });
  });
  if (!needs_grad({&x})) return out;
  record(out, {&x}, [](const Tensor& g, GradSink& sink) { sink.add(0, g); }, "add_scalar");
  return out;
}

}  // namespace acm
