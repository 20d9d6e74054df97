#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Core>

#include "acmseg/ops.hpp"

namespace acm {

namespace {

std::int64_t normalize_axis(std::int64_t axis, std::int64_t rank) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) fail(Errc::InvalidAxis, "axis out of range");
  return axis;
}

struct AxisSplit {
  std::int64_t outer = 1, dim = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::int64_t axis) {
  AxisSplit a;
  for (std::int64_t i = 0; i < axis; ++i) a.outer *= s[i];
  a.dim = s[axis];
  for (std::int64_t i = axis + 1; i < static_cast<std::int64_t>(s.size()); ++i) a.inner *= s[i];
  return a;
}

}  // namespace

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    fail(Errc::ShapeMismatch, "reshape " + to_string(x.shape()) + " -> " + to_string(shape));
  }
  Tensor out = TensorAccess::with_shape(x, std::move(shape));
  if (!needs_grad({&x})) return out;
  record(out, {&x}, [in = x.shape()](const Tensor& g, GradSink& s) { s.add(0, reshape(g, in)); },
         "reshape");
  return out;
}

Tensor permute(const Tensor& x, const std::vector<std::int64_t>& order) {
  const auto r = x.dim();
  if (static_cast<std::int64_t>(order.size()) != r) {
    fail(Errc::InvalidAxis, "permute order has wrong rank");
  }
  std::vector<bool> seen(static_cast<std::size_t>(r), false);
  for (auto a : order) {
    if (a < 0 || a >= r || seen[a]) fail(Errc::InvalidAxis, "permute order is not a permutation");
    seen[a] = true;
  }
  const Shape& in = x.shape();
  Shape out_shape(static_cast<std::size_t>(r));
  for (std::int64_t i = 0; i < r; ++i) out_shape[i] = in[order[i]];
  const Shape in_strides = strides_of(in);
  Shape src_strides(static_cast<std::size_t>(r));
  for (std::int64_t i = 0; i < r; ++i) src_strides[i] = in_strides[order[i]];

  Tensor out = dispatch(x.dtype(), [&]<typename T>() {
    auto px = x.data<T>();
    std::vector<T> res(px.size());
    std::vector<std::int64_t> idx(static_cast<std::size_t>(r), 0);
    std::int64_t src = 0;
    const std::int64_t inner = out_shape[r - 1];
    const std::int64_t inner_stride = src_strides[r - 1];
    for (std::int64_t base = 0; base < static_cast<std::int64_t>(res.size()); base += inner) {
      for (std::int64_t j = 0; j < inner; ++j) res[base + j] = px[src + j * inner_stride];
      for (std::int64_t d = r - 2; d >= 0; --d) {
        ++idx[d];
        src += src_strides[d];
        if (idx[d] < out_shape[d]) break;
        src -= src_strides[d] * out_shape[d];
        idx[d] = 0;
      }
    }
    return Tensor::from<T>(out_shape, std::move(res));
  });
  if (!needs_grad({&x})) return out;
  std::vector<std::int64_t> inverse(static_cast<std::size_t>(r));
  for (std::int64_t i = 0; i < r; ++i) inverse[order[i]] = i;
  record(out, {&x},
         [inverse](const Tensor& g, GradSink& s) { s.add(0, permute(g, inverse)); }, "permute");
  return out;
}

Tensor concat(std::span<const Tensor> parts, std::int64_t axis) {
  if (parts.empty()) fail(Errc::ShapeMismatch, "concat of zero tensors");
  const Tensor& first = parts[0];
  axis = normalize_axis(axis, first.dim());
  Shape out_shape = first.shape();
  out_shape[axis] = 0;
  std::vector<std::int64_t> sizes;
  for (const auto& p : parts) {
    check_same_dtype(first, p, "concat");
    if (p.dim() != first.dim()) fail(Errc::ShapeMismatch, "concat rank mismatch");
    for (std::int64_t i = 0; i < first.dim(); ++i) {
      if (i != axis && p.shape()[i] != first.shape()[i]) {
        fail(Errc::ShapeMismatch, "concat " + to_string(first.shape()) + " with " +
                                      to_string(p.shape()));
      }
    }
    sizes.push_back(p.shape()[axis]);
    out_shape[axis] += p.shape()[axis];
  }
  const AxisSplit os = split_at(out_shape, axis);
  Tensor out = dispatch(first.dtype(), [&]<typename T>() {
    std::vector<T> res(static_cast<std::size_t>(numel(out_shape)));
    std::int64_t offset = 0;
    for (const auto& p : parts) {
      auto pp = p.data<T>();
      const std::int64_t chunk = p.shape()[axis] * os.inner;
      for (std::int64_t o = 0; o < os.outer; ++o) {
        std::copy_n(pp.data() + o * chunk, chunk, res.data() + o * os.dim * os.inner + offset);
      }
      offset += chunk;
    }
    return Tensor::from<T>(out_shape, std::move(res));
  });

  bool any = false;
  for (const auto& p : parts) any = any || needs_grad({&p});
  if (!any) return out;
  std::vector<const Tensor*> inputs;
  for (const auto& p : parts) inputs.push_back(&p);
  BackwardFn fn = [axis, sizes](const Tensor& g, GradSink& s) {
    std::int64_t start = 0;
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      if (s.wants(i)) s.add(i, slice(g, axis, start, sizes[i]));
      start += sizes[i];
    }
  };
  if (Tape* tape = active_tape()) tape->record(out, inputs, std::move(fn), "concat");
  return out;
}

Tensor slice(const Tensor& x, std::int64_t axis, std::int64_t start, std::int64_t length) {
  axis = normalize_axis(axis, x.dim());
  const Shape& in = x.shape();
  if (start < 0 || length < 1 || start + length > in[axis]) {
    fail(Errc::ShapeMismatch, "slice [" + std::to_string(start) + ", +" + std::to_string(length) +
                                  ") out of range for " + to_string(in));
  }
  Shape out_shape = in;
  out_shape[axis] = length;
  const AxisSplit is = split_at(in, axis);
  Tensor out = dispatch(x.dtype(), [&]<typename T>() {
    auto px = x.data<T>();
    std::vector<T> res(static_cast<std::size_t>(numel(out_shape)));
    const std::int64_t chunk = length * is.inner;
    for (std::int64_t o = 0; o < is.outer; ++o) {
      std::copy_n(px.data() + o * is.dim * is.inner + start * is.inner, chunk,
                  res.data() + o * chunk);
    }
    return Tensor::from<T>(out_shape, std::move(res));
  });
  if (!needs_grad({&x})) return out;
  BackwardFn fn = [in, axis, start, length, is](const Tensor& g, GradSink& s) {
    Tensor gx = dispatch(g.dtype(), [&]<typename T>() {
      auto pg = g.data<T>();
      std::vector<T> res(static_cast<std::size_t>(numel(in)), T(0));
      const std::int64_t chunk = length * is.inner;
      for (std::int64_t o = 0; o < is.outer; ++o) {
        std::copy_n(pg.data() + o * chunk, chunk,
                    res.data() + o * is.dim * is.inner + start * is.inner);
      }
      return Tensor::from<T>(in, std::move(res));
    });
    s.add(0, std::move(gx));
  };
  record(out, {&x}, std::move(fn), "slice");
  return out;
}

Tensor stack(std::span<const Tensor> parts) {
  std::vector<Tensor> lifted;
  lifted.reserve(parts.size());
  for (const auto& p : parts) {
    Shape s = p.shape();
    s.insert(s.begin(), 1);
    lifted.push_back(reshape(p, s));
  }
  return concat(lifted, 0);
}

Tensor log_softmax(const Tensor& x, std::int64_t axis) {
  axis = normalize_axis(axis, x.dim());
  const AxisSplit sp = split_at(x.shape(), axis);
  Tensor out = dispatch(x.dtype(), [&]<typename T>() {
    auto px = x.data<T>();
    std::vector<T> res(px.size());
    for (std::int64_t o = 0; o < sp.outer; ++o) {
      for (std::int64_t i = 0; i < sp.inner; ++i) {
        const std::int64_t base = o * sp.dim * sp.inner + i;
        T m = -std::numeric_limits<T>::infinity();
        for (std::int64_t k = 0; k < sp.dim; ++k) m = std::max(m, px[base + k * sp.inner]);
        T acc = 0;
        for (std::int64_t k = 0; k < sp.dim; ++k) acc += std::exp(px[base + k * sp.inner] - m);
        const T lse = m + std::log(acc);
        for (std::int64_t k = 0; k < sp.dim; ++k) {
          res[base + k * sp.inner] = px[base + k * sp.inner] - lse;
        }
      }
    }
    return Tensor::from<T>(x.shape(), std::move(res));
  });
  if (!needs_grad({&x})) return out;
  BackwardFn fn = [sp, y = out.detach()](const Tensor& g, GradSink& s) {
    Tensor gx = dispatch(g.dtype(), [&]<typename T>() {
      auto py = y.data<T>();
      auto pg = g.data<T>();
      std::vector<T> res(py.size());
      for (std::int64_t o = 0; o < sp.outer; ++o) {
        for (std::int64_t i = 0; i < sp.inner; ++i) {
          const std::int64_t base = o * sp.dim * sp.inner + i;
          T gs = 0;
          for (std::int64_t k = 0; k < sp.dim; ++k) gs += pg[base + k * sp.inner];
          for (std::int64_t k = 0; k < sp.dim; ++k) {
            const std::int64_t j = base + k * sp.inner;
            res[j] = pg[j] - std::exp(py[j]) * gs;
          }
        }
      }
      return Tensor::from<T>(y.shape(), std::move(res));
    });
    s.add(0, std::move(gx));
  };
  record(out, {&x}, std::move(fn), "log_softmax");
  return out;
}

Tensor softmax(const Tensor& x, std::int64_t axis) { return exp(log_softmax(x, axis)); }

namespace {
template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
Tensor matmul_raw(const Tensor& a, const Tensor& b, bool ta, bool tb) {
  const auto ar = a.shape()[0], ac = a.shape()[1];
  const auto br = b.shape()[0], bc = b.shape()[1];
  Eigen::Map<const RowMat<T>> A(a.data<T>().data(), ar, ac);
  Eigen::Map<const RowMat<T>> B(b.data<T>().data(), br, bc);
  const auto m = ta ? ac : ar;
  const auto n = tb ? br : bc;
  std::vector<T> res(static_cast<std::size_t>(m * n));
  Eigen::Map<RowMat<T>> C(res.data(), m, n);
  if (ta && tb) C.noalias() = A.transpose() * B.transpose();
  else if (ta) C.noalias() = A.transpose() * B;
  else if (tb) C.noalias() = A * B.transpose();
  else C.noalias() = A * B;
  return Tensor::from<T>({m, n}, std::move(res));
}
}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_same_dtype(a, b, "matmul");
  if (a.dim() != 2 || b.dim() != 2 || a.shape()[1] != b.shape()[0]) {
    fail(Errc::ShapeMismatch, "matmul " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  Tensor out = dispatch(a.dtype(), [&]<typename T>() { return matmul_raw<T>(a, b, false, false); });
  if (!needs_grad({&a, &b})) return out;
  BackwardFn fn = [a = a.detach(), b = b.detach()](const Tensor& g, GradSink& s) {
    dispatch(g.dtype(), [&]<typename T>() {
      if (s.wants(0)) s.add(0, matmul_raw<T>(g, b, false, true));
      if (s.wants(1)) s.add(1, matmul_raw<T>(a, g, true, false));
    });
  };
  record(out, {&a, &b}, std::move(fn), "matmul");
  return out;
}

}  // namespace acm
