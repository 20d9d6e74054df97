#include "acmseg/ops.hpp"
#include "acmseg/ssm.hpp"

namespace acm::ssm {

std::vector<std::int64_t> scan_order(int dir, std::int64_t h, std::int64_t w) {
  const std::int64_t len = h * w;
  std::vector<std::int64_t> order(static_cast<std::size_t>(len));
  for (std::int64_t t = 0; t < len; ++t) {
    switch (dir) {
      case 0: order[t] = t; break;
      case 1: order[t] = (t % h) * w + t / h; break;
      case 2: order[t] = len - 1 - t; break;
      case 3: {
        const std::int64_t r = len - 1 - t;
        order[t] = (r % h) * w + r / h;
        break;
      }
      default: fail(Errc::InvalidAxis, "scan direction must be 0..3");
    }
  }
  return order;
}

namespace {

using Orders = std::array<std::vector<std::int64_t>, 4>;

Orders all_orders(std::int64_t h, std::int64_t w) {
  return {scan_order(0, h, w), scan_order(1, h, w), scan_order(2, h, w), scan_order(3, h, w)};
}

// x [n,c,hw] -> [n,4,c,hw]
Tensor expand_raw(const Tensor& x, std::int64_t h, std::int64_t w) {
  const std::int64_t n = x.shape()[0], c = x.shape()[1], len = h * w;
  const Orders ord = all_orders(h, w);
  return dispatch(x.dtype(), [&]<typename T>() {
    auto src = x.data<T>();
    std::vector<T> out(static_cast<std::size_t>(n * 4 * c * len));
    for (std::int64_t b = 0; b < n; ++b)
      for (int k = 0; k < 4; ++k)
        for (std::int64_t ch = 0; ch < c; ++ch) {
          const T* s = src.data() + (b * c + ch) * len;
          T* d = out.data() + ((b * 4 + k) * c + ch) * len;
          for (std::int64_t t = 0; t < len; ++t) d[t] = s[ord[k][t]];
        }
    return Tensor::from<T>({n, 4, c, len}, std::move(out));
  });
}

// seqs [n,4,c,hw] -> [n,c,hw]
Tensor merge_raw(const Tensor& seqs, std::int64_t h, std::int64_t w) {
  const std::int64_t n = seqs.shape()[0], c = seqs.shape()[2], len = h * w;
  const Orders ord = all_orders(h, w);
  return dispatch(seqs.dtype(), [&]<typename T>() {
    auto src = seqs.data<T>();
    std::vector<T> out(static_cast<std::size_t>(n * c * len), T(0));
    for (std::int64_t b = 0; b < n; ++b)
      for (int k = 0; k < 4; ++k)
        for (std::int64_t ch = 0; ch < c; ++ch) {
          const T* s = src.data() + ((b * 4 + k) * c + ch) * len;
          T* d = out.data() + (b * c + ch) * len;
          for (std::int64_t t = 0; t < len; ++t) d[ord[k][t]] += s[t];
        }
    return Tensor::from<T>({n, c, len}, std::move(out));
  });
}

}  // namespace

Tensor scan_expand(const Tensor& x) {
  if (x.dim() != 3 && x.dim() != 4) {
    fail(Errc::ShapeMismatch, "scan_expand expects [c,h,w] or [n,c,h,w], got " +
                                  to_string(x.shape()));
  }
  const bool batched = x.dim() == 4;
  const std::int64_t n = batched ? x.shape()[0] : 1;
  const std::int64_t c = x.shape()[x.dim() - 3], h = x.shape()[x.dim() - 2],
                     w = x.shape()[x.dim() - 1];
  Tensor out = expand_raw(TensorAccess::with_shape(x, {n, c, h * w}), h, w);
  if (needs_grad({&x})) {
    const Shape in_shape = x.shape();
    record(out, {&x},
           [h, w, in_shape](const Tensor& g, GradSink& s) {
             s.add(0, TensorAccess::with_shape(merge_raw(g, h, w), in_shape));
           },
           "scan_expand");
  }
  return batched ? out : reshape(out, {4, c, h * w});
}

Tensor scan_merge(const Tensor& seqs, std::int64_t h, std::int64_t w) {
  const bool batched = seqs.dim() == 4;
  if ((seqs.dim() != 3 && !batched) || seqs.shape()[seqs.dim() - 3] != 4 ||
      seqs.shape()[seqs.dim() - 1] != h * w) {
    fail(Errc::ShapeMismatch, "scan_merge expects [(n,)4,c," + std::to_string(h * w) +
                                  "], got " + to_string(seqs.shape()));
  }
  const std::int64_t n = batched ? seqs.shape()[0] : 1;
  const std::int64_t c = seqs.shape()[seqs.dim() - 2];
  const Tensor flat = batched ? seqs : reshape(seqs, {1, 4, c, h * w});
  Tensor out = TensorAccess::with_shape(merge_raw(flat, h, w), {n, c, h, w});
  if (needs_grad({&flat})) {
    record(out, {&flat},
           [h, w, n, c](const Tensor& g, GradSink& s) {
             s.add(0, expand_raw(TensorAccess::with_shape(g, {n, c, h * w}), h, w));
           },
           "scan_merge");
  }
  return batched ? out : reshape(out, {c, h, w});
}

Tensor ss2d(const Tensor& x, const S6Params& p) {
  const bool batched = x.dim() == 4;
  const Tensor xb = batched ? x : reshape(x, {1, x.shape()[0], x.shape()[1], x.shape()[2]});
  if (xb.dim() != 4 || xb.shape()[1] != p.d_inner || p.groups != 4) {
    fail(Errc::ShapeMismatch, "ss2d expects [n," + std::to_string(p.d_inner) +
                                  ",h,w] with 4 scan groups, got " + to_string(x.shape()));
  }
  const std::int64_t n = xb.shape()[0], c = xb.shape()[1], h = xb.shape()[2], w = xb.shape()[3];
  const std::int64_t len = h * w;
  const Tensor seqs = reshape(permute(scan_expand(xb), {0, 1, 3, 2}), {n * 4, len, c});
  const Tensor y = selective_scan(seqs, p);
  const Tensor back = permute(reshape(y, {n, 4, len, c}), {0, 1, 3, 2});
  const Tensor out = scan_merge(back, h, w);
  return batched ? out : reshape(out, x.shape());
}

}  // namespace acm::ssm
