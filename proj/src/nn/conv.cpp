#include <algorithm>
#include <cmath>

#include <Eigen/Core>

#include "acmseg/nn.hpp"
#include "acmseg/ops.hpp"

namespace acm::nn {

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ConvGeom {
  std::int64_t n, c, h, w;
  std::int64_t o, kh, kw;
  std::int64_t ho, wo;
  std::int64_t sh, sw, ph, pw;
  std::int64_t groups, cg, og;
  std::int64_t k() const { return cg * kh * kw; }
  std::int64_t p() const { return ho * wo; }
};

// Output columns [lo, hi) whose input coordinate stays inside [0, size).
inline void valid_range(std::int64_t size, std::int64_t out, std::int64_t stride,
                        std::int64_t pad, std::int64_t k, std::int64_t& lo, std::int64_t& hi) {
  // in = o*stride - pad + k
  const std::int64_t a = pad - k;
  lo = a <= 0 ? 0 : (a + stride - 1) / stride;
  const std::int64_t b = size - 1 + pad - k;
  hi = b < 0 ? 0 : std::min(out, b / stride + 1);
  if (hi < lo) hi = lo;
}

// col [K, N*P] for one group.
template <class T>
void im2col(const T* x, const ConvGeom& g, std::int64_t group, T* col) {
  const std::int64_t np = g.n * g.p();
  for (std::int64_t c = 0; c < g.cg; ++c) {
    for (std::int64_t ky = 0; ky < g.kh; ++ky) {
      std::int64_t xlo = 0, xhi = 0;
      for (std::int64_t kx = 0; kx < g.kw; ++kx) {
        valid_range(g.w, g.wo, g.sw, g.pw, kx, xlo, xhi);
        T* dst = col + ((c * g.kh + ky) * g.kw + kx) * np;
        for (std::int64_t n = 0; n < g.n; ++n) {
          const T* src = x + (n * g.c + group * g.cg + c) * g.h * g.w;
          for (std::int64_t oy = 0; oy < g.ho; ++oy) {
            T* d = dst + n * g.p() + oy * g.wo;
            const std::int64_t iy = oy * g.sh - g.ph + ky;
            if (iy < 0 || iy >= g.h) {
              std::fill_n(d, g.wo, T(0));
              continue;
            }
            const T* row = src + iy * g.w;
            std::fill(d, d + xlo, T(0));
            for (std::int64_t ox = xlo; ox < xhi; ++ox) d[ox] = row[ox * g.sw - g.pw + kx];
            std::fill(d + xhi, d + g.wo, T(0));
          }
        }
      }
    }
  }
}

template <class T>
void col2im(const T* col, const ConvGeom& g, std::int64_t group, T* dx) {
  const std::int64_t np = g.n * g.p();
  for (std::int64_t c = 0; c < g.cg; ++c) {
    for (std::int64_t ky = 0; ky < g.kh; ++ky) {
      std::int64_t xlo = 0, xhi = 0;
      for (std::int64_t kx = 0; kx < g.kw; ++kx) {
        valid_range(g.w, g.wo, g.sw, g.pw, kx, xlo, xhi);
        const T* src = col + ((c * g.kh + ky) * g.kw + kx) * np;
        for (std::int64_t n = 0; n < g.n; ++n) {
          T* dst = dx + (n * g.c + group * g.cg + c) * g.h * g.w;
          for (std::int64_t oy = 0; oy < g.ho; ++oy) {
            const std::int64_t iy = oy * g.sh - g.ph + ky;
            if (iy < 0 || iy >= g.h) continue;
            const T* s = src + n * g.p() + oy * g.wo;
            T* row = dst + iy * g.w;
            for (std::int64_t ox = xlo; ox < xhi; ++ox) row[ox * g.sw - g.pw + kx] += s[ox];
          }
        }
      }
    }
  }
}

template <class T>
std::vector<T> conv_forward(const T* x, const T* w, const T* b, const ConvGeom& g) {
  std::vector<T> out(static_cast<std::size_t>(g.n * g.o * g.p()), T(0));
  const std::int64_t np = g.n * g.p();
  std::vector<T> col(static_cast<std::size_t>(g.k() * np));
  std::vector<T> y(static_cast<std::size_t>(g.og * np));
  for (std::int64_t grp = 0; grp < g.groups; ++grp) {
    im2col(x, g, grp, col.data());
    Eigen::Map<const RowMat<T>> W(w + grp * g.og * g.k(), g.og, g.k());
    Eigen::Map<const RowMat<T>> C(col.data(), g.k(), np);
    Eigen::Map<RowMat<T>> Y(y.data(), g.og, np);
    Y.noalias() = W * C;
    for (std::int64_t o = 0; o < g.og; ++o) {
      const std::int64_t oc = grp * g.og + o;
      const T bias = b ? b[oc] : T(0);
      for (std::int64_t n = 0; n < g.n; ++n) {
        const T* src = y.data() + o * np + n * g.p();
        T* dst = out.data() + (n * g.o + oc) * g.p();
        for (std::int64_t i = 0; i < g.p(); ++i) dst[i] = src[i] + bias;
      }
    }
  }
  return out;
}

// Depthwise with channel multiplier 1: direct loops.
template <class T>
std::vector<T> depthwise_forward(const T* x, const T* w, const T* b, const ConvGeom& g) {
  std::vector<T> out(static_cast<std::size_t>(g.n * g.o * g.p()));
  for (std::int64_t n = 0; n < g.n; ++n) {
    for (std::int64_t c = 0; c < g.c; ++c) {
      const T* src = x + (n * g.c + c) * g.h * g.w;
      const T* wk = w + c * g.kh * g.kw;
      T* dst = out.data() + (n * g.c + c) * g.p();
      std::fill_n(dst, g.p(), b ? b[c] : T(0));
      for (std::int64_t ky = 0; ky < g.kh; ++ky) {
        for (std::int64_t kx = 0; kx < g.kw; ++kx) {
          const T wv = wk[ky * g.kw + kx];
          std::int64_t xlo = 0, xhi = 0;
          valid_range(g.w, g.wo, g.sw, g.pw, kx, xlo, xhi);
          for (std::int64_t oy = 0; oy < g.ho; ++oy) {
            const std::int64_t iy = oy * g.sh - g.ph + ky;
            if (iy < 0 || iy >= g.h) continue;
            const T* row = src + iy * g.w - g.pw + kx;
            T* d = dst + oy * g.wo;
            for (std::int64_t ox = xlo; ox < xhi; ++ox) d[ox] += wv * row[ox * g.sw];
          }
        }
      }
    }
  }
  return out;
}

template <class T>
void depthwise_backward(const T* x, const T* w, const T* gy, const ConvGeom& g, T* dx, T* dw) {
  for (std::int64_t n = 0; n < g.n; ++n) {
    for (std::int64_t c = 0; c < g.c; ++c) {
      const T* src = x + (n * g.c + c) * g.h * g.w;
      const T* wk = w + c * g.kh * g.kw;
      const T* gd = gy + (n * g.c + c) * g.p();
      T* dsrc = dx ? dx + (n * g.c + c) * g.h * g.w : nullptr;
      T* dwk = dw ? dw + c * g.kh * g.kw : nullptr;
      for (std::int64_t ky = 0; ky < g.kh; ++ky) {
        for (std::int64_t kx = 0; kx < g.kw; ++kx) {
          const T wv = wk[ky * g.kw + kx];
          std::int64_t xlo = 0, xhi = 0;
          valid_range(g.w, g.wo, g.sw, g.pw, kx, xlo, xhi);
          T acc = 0;
          for (std::int64_t oy = 0; oy < g.ho; ++oy) {
            const std::int64_t iy = oy * g.sh - g.ph + ky;
            if (iy < 0 || iy >= g.h) continue;
            const std::int64_t off = iy * g.w - g.pw + kx;
            const T* gr = gd + oy * g.wo;
            if (dwk) {
              const T* row = src + off;
              for (std::int64_t ox = xlo; ox < xhi; ++ox) acc += gr[ox] * row[ox * g.sw];
            }
            if (dsrc) {
              T* drow = dsrc + off;
              for (std::int64_t ox = xlo; ox < xhi; ++ox) drow[ox * g.sw] += wv * gr[ox];
            }
          }
          if (dwk) dwk[ky * g.kw + kx] += acc;
        }
      }
    }
  }
}

}  // namespace

std::int64_t conv_output_size(std::int64_t in, std::int64_t kernel, std::int64_t stride,
                              std::int64_t pad) {
  if (stride < 1 || pad < 0 || kernel < 1) fail(Errc::ShapeMismatch, "bad conv geometry");
  const std::int64_t span = in + 2 * pad - kernel;
  if (span < 0) {
    fail(Errc::ShapeMismatch, "kernel " + std::to_string(kernel) + " exceeds padded input " +
                                  std::to_string(in + 2 * pad));
  }
  if (span % stride > pad && kernel >= stride) {
    fail(Errc::NonIntegralOutputSize,
         "(" + std::to_string(in) + " + 2*" + std::to_string(pad) + " - " +
             std::to_string(kernel) + ") / " + std::to_string(stride) + " drops input pixels");
  }
  return span / stride + 1;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, const Conv2dOptions& opt) {
  check_same_dtype(x, w, "conv2d");
  if (x.dim() != 4 || w.dim() != 4) {
    fail(Errc::ShapeMismatch, "conv2d expects 4-d input and weight, got " + to_string(x.shape()) +
                                  " and " + to_string(w.shape()));
  }
  ConvGeom g{};
  g.n = x.shape()[0];
  g.c = x.shape()[1];
  g.h = x.shape()[2];
  g.w = x.shape()[3];
  g.o = w.shape()[0];
  g.kh = w.shape()[2];
  g.kw = w.shape()[3];
  g.sh = opt.stride_h;
  g.sw = opt.stride_w;
  g.ph = opt.pad_h;
  g.pw = opt.pad_w;
  g.groups = opt.groups;
  if (g.groups < 1 || g.c % g.groups != 0 || g.o % g.groups != 0) {
    fail(Errc::ShapeMismatch, "channels not divisible by groups");
  }
  g.cg = g.c / g.groups;
  g.og = g.o / g.groups;
  if (w.shape()[1] != g.cg) {
    fail(Errc::ShapeMismatch, "conv2d input has " + std::to_string(g.c) +
                                  " channels, weight expects " +
                                  std::to_string(w.shape()[1] * g.groups));
  }
  if (b.defined()) {
    check_same_dtype(x, b, "conv2d");
    if (b.numel() != g.o) fail(Errc::ShapeMismatch, "conv2d bias size");
  }
  g.ho = conv_output_size(g.h, g.kh, g.sh, g.ph);
  g.wo = conv_output_size(g.w, g.kw, g.sw, g.pw);
  const bool depthwise = g.cg == 1 && g.og == 1;

  Tensor out = dispatch(x.dtype(), [&]<typename T>() {
    const T* bp = b.defined() ? b.data<T>().data() : nullptr;
    auto res = depthwise ? depthwise_forward<T>(x.data<T>().data(), w.data<T>().data(), bp, g)
                         : conv_forward<T>(x.data<T>().data(), w.data<T>().data(), bp, g);
    return Tensor::from<T>({g.n, g.o, g.ho, g.wo}, std::move(res));
  });
  if (!needs_grad({&x, &w, &b})) return out;

  BackwardFn fn = [x = x.detach(), w = w.detach(), g, depthwise, has_bias = b.defined()](
                      const Tensor& gy, GradSink& s) {
    dispatch(x.dtype(), [&]<typename T>() {
      const T* px = x.data<T>().data();
      const T* pw = w.data<T>().data();
      const T* pg = gy.data<T>().data();
      std::vector<T> dx(s.wants(0) ? static_cast<std::size_t>(x.numel()) : 0, T(0));
      std::vector<T> dw(s.wants(1) ? static_cast<std::size_t>(w.numel()) : 0, T(0));
      if (depthwise) {
        depthwise_backward<T>(px, pw, pg, g, dx.empty() ? nullptr : dx.data(),
                              dw.empty() ? nullptr : dw.data());
      } else {
        const std::int64_t np = g.n * g.p();
        std::vector<T> col(static_cast<std::size_t>(g.k() * np));
        std::vector<T> gyg(static_cast<std::size_t>(g.og * np));
        for (std::int64_t grp = 0; grp < g.groups; ++grp) {
          for (std::int64_t o = 0; o < g.og; ++o) {
            for (std::int64_t n = 0; n < g.n; ++n) {
              std::copy_n(pg + (n * g.o + grp * g.og + o) * g.p(), g.p(),
                          gyg.data() + o * np + n * g.p());
            }
          }
          Eigen::Map<const RowMat<T>> GY(gyg.data(), g.og, np);
          if (!dw.empty()) {
            im2col(px, g, grp, col.data());
            Eigen::Map<const RowMat<T>> C(col.data(), g.k(), np);
            Eigen::Map<RowMat<T>> DW(dw.data() + grp * g.og * g.k(), g.og, g.k());
            DW.noalias() = GY * C.transpose();
          }
          if (!dx.empty()) {
            Eigen::Map<const RowMat<T>> W(pw + grp * g.og * g.k(), g.og, g.k());
            Eigen::Map<RowMat<T>> DC(col.data(), g.k(), np);
            DC.noalias() = W.transpose() * GY;
            col2im(col.data(), g, grp, dx.data());
          }
        }
      }
      if (!dx.empty()) s.add(0, Tensor::from<T>(x.shape(), std::move(dx)));
      if (!dw.empty()) s.add(1, Tensor::from<T>(w.shape(), std::move(dw)));
      if (has_bias && s.wants(2)) {
        std::vector<T> db(static_cast<std::size_t>(g.o), T(0));
        for (std::int64_t n = 0; n < g.n; ++n) {
          for (std::int64_t o = 0; o < g.o; ++o) {
            const T* r = pg + (n * g.o + o) * g.p();
            T acc = 0;
            for (std::int64_t i = 0; i < g.p(); ++i) acc += r[i];
            db[o] += acc;
          }
        }
        s.add(2, Tensor::from<T>({g.o}, std::move(db)));
      }
    });
  };
  record(out, {&x, &w, &b}, std::move(fn), "conv2d");
  return out;
}

Tensor kaiming_uniform(Shape shape, std::int64_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::vector<double> v(static_cast<std::size_t>(numel(shape)));
  for (auto& e : v) e = rng.uniform(-bound, bound);
  return Tensor::from_doubles(std::move(shape), v);
}

Conv2dParams Conv2dParams::make(const std::string& name, std::int64_t in_ch, std::int64_t out_ch,
                                std::int64_t kernel, Rng& rng, bool bias, std::int64_t stride,
                                std::int64_t groups) {
  if (in_ch % groups != 0 || out_ch % groups != 0) {
    fail(Errc::InvalidConfig, name + ": channels not divisible by groups");
  }
  Conv2dParams p;
  const std::int64_t fan_in = (in_ch / groups) * kernel * kernel;
  p.weight = Parameter(name + ".weight",
                       kaiming_uniform({out_ch, in_ch / groups, kernel, kernel}, fan_in, rng));
  p.has_bias = bias;
  if (bias) p.bias = Parameter(name + ".bias", Tensor::zeros({out_ch}), false);
  p.opt.stride_h = p.opt.stride_w = stride;
  p.opt.pad_h = p.opt.pad_w = kernel / 2;
  p.opt.groups = groups;
  return p;
}

void Conv2dParams::collect(ParamList& out) {
  out.params.push_back(&weight);
  if (has_bias) out.params.push_back(&bias);
}

Tensor conv2d(const Tensor& x, const Conv2dParams& p) {
  return conv2d(x, use(p.weight), p.has_bias ? use(p.bias) : Tensor(), p.opt);
}

DepthwiseSeparable DepthwiseSeparable::make(const std::string& name, std::int64_t in_ch,
                                            std::int64_t out_ch, std::int64_t kernel, Rng& rng) {
  DepthwiseSeparable d;
  d.depthwise = Conv2dParams::make(name + ".depthwise", in_ch, in_ch, kernel, rng, true, 1, in_ch);
  d.pointwise = Conv2dParams::make(name + ".pointwise", in_ch, out_ch, 1, rng, true);
  return d;
}

void DepthwiseSeparable::collect(ParamList& out) {
  depthwise.collect(out);
  pointwise.collect(out);
}

Tensor depthwise_separable_conv(const Tensor& x, const Conv2dParams& depthwise,
                                const Conv2dParams& pointwise) {
  if (depthwise.opt.groups != x.size(1)) {
    fail(Errc::ShapeMismatch, "depthwise stage must have groups == channels");
  }
  if (pointwise.weight.value.shape()[2] != 1 || pointwise.weight.value.shape()[3] != 1) {
    fail(Errc::ShapeMismatch, "pointwise stage must be 1x1");
  }
  return conv2d(conv2d(x, depthwise), pointwise);
}

Tensor depthwise_separable_conv(const Tensor& x, const DepthwiseSeparable& p) {
  return depthwise_separable_conv(x, p.depthwise, p.pointwise);
}

}  // namespace acm::nn
