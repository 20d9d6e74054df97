#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Core>

#include "acmseg/nn.hpp"
#include "acmseg/ops.hpp"

namespace acm::nn {

namespace {
template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct AxisTap {
  std::int64_t i0, i1;
  double w1;  // weight of i1; i0 gets 1 - w1
};

std::vector<AxisTap> upsample_taps(std::int64_t size) {
  std::vector<AxisTap> taps(static_cast<std::size_t>(2 * size));
  for (std::int64_t d = 0; d < 2 * size; ++d) {
    double s = (static_cast<double>(d) + 0.5) / 2.0 - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(size - 1));
    const auto i0 = static_cast<std::int64_t>(std::floor(s));
    const std::int64_t i1 = std::min(i0 + 1, size - 1);
    taps[d] = {i0, i1, s - static_cast<double>(i0)};
  }
  return taps;
}
}  // namespace

Tensor activation(Activation kind, const Tensor& x) {
  return kind == Activation::relu ? relu(x) : silu(x);
}

Tensor max_pool2d(const Tensor& x, const PoolOptions& opt) {
  if (x.dim() != 4) fail(Errc::ShapeMismatch, "max_pool2d expects [n,c,h,w]");
  const std::int64_t n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  const std::int64_t ho = conv_output_size(h, opt.kernel_h, opt.stride_h, opt.pad_h);
  const std::int64_t wo = conv_output_size(w, opt.kernel_w, opt.stride_w, opt.pad_w);
  std::vector<std::int64_t> argmax(static_cast<std::size_t>(n * c * ho * wo));
  Tensor out = dispatch(x.dtype(), [&]<typename T>() {
    auto px = x.data<T>();
    std::vector<T> y(argmax.size());
    for (std::int64_t plane = 0; plane < n * c; ++plane) {
      const std::int64_t base = plane * h * w;
      for (std::int64_t oy = 0; oy < ho; ++oy) {
        for (std::int64_t ox = 0; ox < wo; ++ox) {
          T best = -std::numeric_limits<T>::infinity();
          std::int64_t arg = -1;
          for (std::int64_t ky = 0; ky < opt.kernel_h; ++ky) {
            const std::int64_t iy = oy * opt.stride_h - opt.pad_h + ky;
            if (iy < 0 || iy >= h) continue;
            for (std::int64_t kx = 0; kx < opt.kernel_w; ++kx) {
              const std::int64_t ix = ox * opt.stride_w - opt.pad_w + kx;
              if (ix < 0 || ix >= w) continue;
              const std::int64_t j = base + iy * w + ix;
              if (arg < 0 || px[j] > best) {
                best = px[j];
                arg = j;
              }
            }
          }
          const std::int64_t o = (plane * ho + oy) * wo + ox;
          y[o] = best;
          argmax[o] = arg;
        }
      }
    }
    return Tensor::from<T>({n, c, ho, wo}, std::move(y));
  });
  if (!needs_grad({&x})) return out;
  BackwardFn fn = [argmax = std::move(argmax), in = x.shape()](const Tensor& g, GradSink& s) {
    Tensor gx = dispatch(g.dtype(), [&]<typename T>() {
      auto pg = g.data<T>();
      std::vector<T> dx(static_cast<std::size_t>(numel(in)), T(0));
      for (std::size_t o = 0; o < argmax.size(); ++o) dx[argmax[o]] += pg[o];
      return Tensor::from<T>(in, std::move(dx));
    });
    s.add(0, std::move(gx));
  };
  record(out, {&x}, std::move(fn), "max_pool2d");
  return out;
}

Tensor bilinear_upsample2x(const Tensor& x) {
  if (x.dim() != 4) fail(Errc::ShapeMismatch, "bilinear_upsample2x expects [n,c,h,w]");
  const std::int64_t planes = x.shape()[0] * x.shape()[1];
  const std::int64_t h = x.shape()[2], w = x.shape()[3];
  const auto ty = upsample_taps(h);
  const auto tx = upsample_taps(w);
  const Shape out_shape{x.shape()[0], x.shape()[1], 2 * h, 2 * w};
  Tensor out = dispatch(x.dtype(), [&]<typename T>() {
    auto px = x.data<T>();
    std::vector<T> y(static_cast<std::size_t>(numel(out_shape)));
    for (std::int64_t p = 0; p < planes; ++p) {
      const T* src = px.data() + p * h * w;
      T* dst = y.data() + p * 4 * h * w;
      for (std::int64_t oy = 0; oy < 2 * h; ++oy) {
        const auto& a = ty[oy];
        const T wy1 = static_cast<T>(a.w1), wy0 = T(1) - wy1;
        for (std::int64_t ox = 0; ox < 2 * w; ++ox) {
          const auto& b = tx[ox];
          const T wx1 = static_cast<T>(b.w1), wx0 = T(1) - wx1;
          dst[oy * 2 * w + ox] =
              wy0 * (wx0 * src[a.i0 * w + b.i0] + wx1 * src[a.i0 * w + b.i1]) +
              wy1 * (wx0 * src[a.i1 * w + b.i0] + wx1 * src[a.i1 * w + b.i1]);
        }
      }
    }
    return Tensor::from<T>(out_shape, std::move(y));
  });
  if (!needs_grad({&x})) return out;
  BackwardFn fn = [ty, tx, planes, h, w, in = x.shape()](const Tensor& g, GradSink& s) {
    Tensor gx = dispatch(g.dtype(), [&]<typename T>() {
      auto pg = g.data<T>();
      std::vector<T> dx(static_cast<std::size_t>(numel(in)), T(0));
      for (std::int64_t p = 0; p < planes; ++p) {
        const T* src = pg.data() + p * 4 * h * w;
        T* dst = dx.data() + p * h * w;
        for (std::int64_t oy = 0; oy < 2 * h; ++oy) {
          const auto& a = ty[oy];
          const T wy1 = static_cast<T>(a.w1), wy0 = T(1) - wy1;
          for (std::int64_t ox = 0; ox < 2 * w; ++ox) {
            const auto& b = tx[ox];
            const T wx1 = static_cast<T>(b.w1), wx0 = T(1) - wx1;
            const T v = src[oy * 2 * w + ox];
            dst[a.i0 * w + b.i0] += wy0 * wx0 * v;
            dst[a.i0 * w + b.i1] += wy0 * wx1 * v;
            dst[a.i1 * w + b.i0] += wy1 * wx0 * v;
            dst[a.i1 * w + b.i1] += wy1 * wx1 * v;
          }
        }
      }
      return Tensor::from<T>(in, std::move(dx));
    });
    s.add(0, std::move(gx));
  };
  record(out, {&x}, std::move(fn), "bilinear_upsample2x");
  return out;
}

LinearParams LinearParams::make(const std::string& name, std::int64_t in, std::int64_t out,
                                Rng& rng, bool bias) {
  LinearParams p;
  p.weight = Parameter(name + ".weight", kaiming_uniform({out, in}, in, rng));
  p.has_bias = bias;
  if (bias) p.bias = Parameter(name + ".bias", Tensor::zeros({out}), false);
  return p;
}

void LinearParams::collect(ParamList& out) {
  out.params.push_back(&weight);
  if (has_bias) out.params.push_back(&bias);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  check_same_dtype(x, w, "linear");
  if (w.dim() != 2 || x.shape().back() != w.shape()[1]) {
    fail(Errc::ShapeMismatch, "linear " + to_string(x.shape()) + " with weight " +
                                  to_string(w.shape()));
  }
  const std::int64_t in = w.shape()[1], out_f = w.shape()[0];
  if (b.defined() && b.numel() != out_f) fail(Errc::ShapeMismatch, "linear bias size");
  const std::int64_t rows = x.numel() / in;
  Shape out_shape = x.shape();
  out_shape.back() = out_f;
  Tensor out = dispatch(x.dtype(), [&]<typename T>() {
    Eigen::Map<const RowMat<T>> X(x.data<T>().data(), rows, in);
    Eigen::Map<const RowMat<T>> W(w.data<T>().data(), out_f, in);
    std::vector<T> y(static_cast<std::size_t>(rows * out_f));
    Eigen::Map<RowMat<T>> Y(y.data(), rows, out_f);
    Y.noalias() = X * W.transpose();
    if (b.defined()) {
      auto pb = b.data<T>();
      for (std::int64_t r = 0; r < rows; ++r) {
        for (std::int64_t o = 0; o < out_f; ++o) y[r * out_f + o] += pb[o];
      }
    }
    return Tensor::from<T>(out_shape, std::move(y));
  });
  if (!needs_grad({&x, &w, &b})) return out;
  BackwardFn fn = [x = x.detach(), w = w.detach(), rows, in, out_f](const Tensor& g,
                                                                    GradSink& s) {
    dispatch(g.dtype(), [&]<typename T>() {
      Eigen::Map<const RowMat<T>> G(g.data<T>().data(), rows, out_f);
      if (s.wants(0)) {
        Eigen::Map<const RowMat<T>> W(w.data<T>().data(), out_f, in);
        std::vector<T> dx(static_cast<std::size_t>(rows * in));
        Eigen::Map<RowMat<T>>(dx.data(), rows, in).noalias() = G * W;
        s.add(0, Tensor::from<T>(x.shape(), std::move(dx)));
      }
      if (s.wants(1)) {
        Eigen::Map<const RowMat<T>> X(x.data<T>().data(), rows, in);
        std::vector<T> dw(static_cast<std::size_t>(out_f * in));
        Eigen::Map<RowMat<T>>(dw.data(), out_f, in).noalias() = G.transpose() * X;
        s.add(1, Tensor::from<T>(w.shape(), std::move(dw)));
      }
      if (s.wants(2)) {
        std::vector<T> db(static_cast<std::size_t>(out_f), T(0));
        auto pg = g.data<T>();
        for (std::int64_t r = 0; r < rows; ++r) {
          for (std::int64_t o = 0; o < out_f; ++o) db[o] += pg[r * out_f + o];
        }
        s.add(2, Tensor::from<T>({out_f}, std::move(db)));
      }
    });
  };
  record(out, {&x, &w, &b}, std::move(fn), "linear");
  return out;
}

Tensor linear(const Tensor& x, const LinearParams& p) {
  return linear(x, use(p.weight), p.has_bias ? use(p.bias) : Tensor());
}

}  // namespace acm::nn
