#include <cmath>

#include "acmseg/nn.hpp"
#include "acmseg/ops.hpp"

namespace acm::nn {

NormParams NormParams::batch(const std::string& name, std::int64_t channels) {
  NormParams p;
  p.gamma = Parameter(name + ".weight", Tensor::ones({channels}), false);
  p.beta = Parameter(name + ".bias", Tensor::zeros({channels}), false);
  p.running_mean = Buffer{name + ".running_mean", Tensor::zeros({channels})};
  p.running_var = Buffer{name + ".running_var", Tensor::ones({channels})};
  p.momentum = 0.1;
  p.eps = 1e-5;
  return p;
}

NormParams NormParams::layer(const std::string& name, std::int64_t channels) {
  NormParams p;
  p.gamma = Parameter(name + ".weight", Tensor::ones({channels}), false);
  p.beta = Parameter(name + ".bias", Tensor::zeros({channels}), false);
  p.eps = 1e-6;
  return p;
}

void NormParams::collect(ParamList& out) {
  out.params.push_back(&gamma);
  out.params.push_back(&beta);
  if (running_mean.value.defined()) {
    out.buffers.push_back(&running_mean);
    out.buffers.push_back(&running_var);
  }
}

Tensor batch_norm(const Tensor& x, NormParams& p, Mode mode) {
  if (x.dim() != 4) fail(Errc::ShapeMismatch, "batch_norm expects [n,c,h,w]");
  const std::int64_t n = x.shape()[0], c = x.shape()[1], hw = x.shape()[2] * x.shape()[3];
  if (p.gamma.value.numel() != c) fail(Errc::ShapeMismatch, "batch_norm channel count");
  const Tensor gamma = use(p.gamma);
  const Tensor beta = use(p.beta);
  check_same_dtype(x, gamma, "batch_norm");
  const std::int64_t count = n * hw;

  std::vector<double> mean(static_cast<std::size_t>(c), 0.0);
  std::vector<double> invstd(static_cast<std::size_t>(c), 0.0);
  Tensor xhat_t;
  Tensor out = dispatch(x.dtype(), [&]<typename T>() {
    auto px = x.data<T>();
    auto pgm = gamma.data<T>();
    auto pbt = beta.data<T>();
    if (mode == Mode::train) {
      std::vector<double> var(static_cast<std::size_t>(c), 0.0);
      for (std::int64_t ch = 0; ch < c; ++ch) {
        double s = 0.0;
        for (std::int64_t b = 0; b < n; ++b) {
          const T* r = px.data() + (b * c + ch) * hw;
          for (std::int64_t i = 0; i < hw; ++i) s += r[i];
        }
        mean[ch] = s / static_cast<double>(count);
        double v = 0.0;
        for (std::int64_t b = 0; b < n; ++b) {
          const T* r = px.data() + (b * c + ch) * hw;
          for (std::int64_t i = 0; i < hw; ++i) {
            const double d = r[i] - mean[ch];
            v += d * d;
          }
        }
        var[ch] = v / static_cast<double>(count);
        invstd[ch] = 1.0 / std::sqrt(var[ch] + p.eps);
      }
      auto rm = p.running_mean.value.to_doubles();
      auto rv = p.running_var.value.to_doubles();
      const double unbias = count > 1 ? static_cast<double>(count) / (count - 1) : 1.0;
      for (std::int64_t ch = 0; ch < c; ++ch) {
        rm[ch] = (1.0 - p.momentum) * rm[ch] + p.momentum * mean[ch];
        rv[ch] = (1.0 - p.momentum) * rv[ch] + p.momentum * var[ch] * unbias;
      }
      p.running_mean.value = Tensor::from_doubles({c}, rm, x.dtype());
      p.running_var.value = Tensor::from_doubles({c}, rv, x.dtype());
    } else {
      const auto rm = p.running_mean.value.to_doubles();
      const auto rv = p.running_var.value.to_doubles();
      for (std::int64_t ch = 0; ch < c; ++ch) {
        mean[ch] = rm[ch];
        invstd[ch] = 1.0 / std::sqrt(rv[ch] + p.eps);
      }
    }
    std::vector<T> xh(px.size());
    std::vector<T> y(px.size());
    for (std::int64_t b = 0; b < n; ++b) {
      for (std::int64_t ch = 0; ch < c; ++ch) {
        const std::int64_t off = (b * c + ch) * hw;
        const T m = static_cast<T>(mean[ch]);
        const T is = static_cast<T>(invstd[ch]);
        for (std::int64_t i = 0; i < hw; ++i) {
          xh[off + i] = (px[off + i] - m) * is;
          y[off + i] = xh[off + i] * pgm[ch] + pbt[ch];
        }
      }
    }
    xhat_t = Tensor::from<T>(x.shape(), std::move(xh));
    return Tensor::from<T>(x.shape(), std::move(y));
  });
  if (!needs_grad({&x, &gamma, &beta})) return out;

  BackwardFn fn = [xhat_t, gamma = gamma.detach(), invstd, n, c, hw, count, mode](
                      const Tensor& g, GradSink& s) {
    dispatch(g.dtype(), [&]<typename T>() {
      auto pg = g.data<T>();
      auto xh = xhat_t.data<T>();
      auto gm = gamma.data<T>();
      std::vector<double> sum_g(static_cast<std::size_t>(c), 0.0);
      std::vector<double> sum_gx(static_cast<std::size_t>(c), 0.0);
      for (std::int64_t b = 0; b < n; ++b) {
        for (std::int64_t ch = 0; ch < c; ++ch) {
          const std::int64_t off = (b * c + ch) * hw;
          for (std::int64_t i = 0; i < hw; ++i) {
            sum_g[ch] += pg[off + i];
            sum_gx[ch] += static_cast<double>(pg[off + i]) * xh[off + i];
          }
        }
      }
      if (s.wants(0)) {
        std::vector<T> dx(pg.size());
        for (std::int64_t b = 0; b < n; ++b) {
          for (std::int64_t ch = 0; ch < c; ++ch) {
            const std::int64_t off = (b * c + ch) * hw;
            const double k = gm[ch] * invstd[ch];
            if (mode == Mode::train) {
              const double mg = sum_g[ch] / count;
              const double mgx = sum_gx[ch] / count;
              for (std::int64_t i = 0; i < hw; ++i) {
                dx[off + i] = static_cast<T>(k * (pg[off + i] - mg - xh[off + i] * mgx));
              }
            } else {
              for (std::int64_t i = 0; i < hw; ++i) dx[off + i] = static_cast<T>(k * pg[off + i]);
            }
          }
        }
        s.add(0, Tensor::from<T>(g.shape(), std::move(dx)));
      }
      if (s.wants(1)) s.add(1, Tensor::from_doubles({c}, sum_gx, g.dtype()));
      if (s.wants(2)) s.add(2, Tensor::from_doubles({c}, sum_g, g.dtype()));
    });
  };
  record(out, {&x, &gamma, &beta}, std::move(fn), "batch_norm");
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  check_same_dtype(x, gamma, "layer_norm");
  const std::int64_t c = x.shape().back();
  if (gamma.numel() != c || beta.numel() != c) fail(Errc::ShapeMismatch, "layer_norm width");
  const std::int64_t rows = x.numel() / c;
  std::vector<double> invstd(static_cast<std::size_t>(rows));
  Tensor xhat_t;
  Tensor out = dispatch(x.dtype(), [&]<typename T>() {
    auto px = x.data<T>();
    auto pgm = gamma.data<T>();
    auto pbt = beta.data<T>();
    std::vector<T> xh(px.size());
    std::vector<T> y(px.size());
    for (std::int64_t r = 0; r < rows; ++r) {
      const T* row = px.data() + r * c;
      double m = 0.0;
      for (std::int64_t i = 0; i < c; ++i) m += row[i];
      m /= static_cast<double>(c);
      double v = 0.0;
      for (std::int64_t i = 0; i < c; ++i) v += (row[i] - m) * (row[i] - m);
      v /= static_cast<double>(c);
      invstd[r] = 1.0 / std::sqrt(v + eps);
      for (std::int64_t i = 0; i < c; ++i) {
        xh[r * c + i] = static_cast<T>((row[i] - m) * invstd[r]);
        y[r * c + i] = xh[r * c + i] * pgm[i] + pbt[i];
      }
    }
    xhat_t = Tensor::from<T>(x.shape(), std::move(xh));
    return Tensor::from<T>(x.shape(), std::move(y));
  });
  if (!needs_grad({&x, &gamma, &beta})) return out;

  BackwardFn fn = [xhat_t, gamma = gamma.detach(), invstd = std::move(invstd), rows, c](
                      const Tensor& g, GradSink& s) {
    dispatch(g.dtype(), [&]<typename T>() {
      auto pg = g.data<T>();
      auto xh = xhat_t.data<T>();
      auto gm = gamma.data<T>();
      std::vector<double> dgamma(static_cast<std::size_t>(c), 0.0);
      std::vector<double> dbeta(static_cast<std::size_t>(c), 0.0);
      std::vector<T> dx(s.wants(0) ? pg.size() : 0);
      for (std::int64_t r = 0; r < rows; ++r) {
        double sd = 0.0, sdx = 0.0;
        for (std::int64_t i = 0; i < c; ++i) {
          const std::int64_t j = r * c + i;
          dgamma[i] += static_cast<double>(pg[j]) * xh[j];
          dbeta[i] += pg[j];
          const double d = static_cast<double>(pg[j]) * gm[i];
          sd += d;
          sdx += d * xh[j];
        }
        if (!dx.empty()) {
          const double md = sd / c, mdx = sdx / c;
          for (std::int64_t i = 0; i < c; ++i) {
            const std::int64_t j = r * c + i;
            dx[j] = static_cast<T>(invstd[r] * (static_cast<double>(pg[j]) * gm[i] - md -
                                                xh[j] * mdx));
          }
        }
      }
      if (!dx.empty()) s.add(0, Tensor::from<T>(g.shape(), std::move(dx)));
      if (s.wants(1)) s.add(1, Tensor::from_doubles({c}, dgamma, g.dtype()));
      if (s.wants(2)) s.add(2, Tensor::from_doubles({c}, dbeta, g.dtype()));
    });
  };
  record(out, {&x, &gamma, &beta}, std::move(fn), "layer_norm");
  return out;
}

Tensor layer_norm(const Tensor& x, const NormParams& p) {
  return layer_norm(x, use(p.gamma), use(p.beta), p.eps);
}

}  // namespace acm::nn
