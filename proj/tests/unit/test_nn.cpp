#include "doctest.h"

#include "acmseg/autograd.hpp"
#include "acmseg/nn.hpp"
#include "helpers.hpp"

using namespace acm;
using testutil::randn;

namespace {

std::vector<double> naive_conv(const Tensor& x, const Tensor& w, const Tensor& b,
                               const nn::Conv2dOptions& o) {
  const auto xv = x.to_doubles(), wv = w.to_doubles();
  const auto bv = b.defined() ? b.to_doubles() : std::vector<double>();
  const auto n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], wd = x.shape()[3];
  const auto oc = w.shape()[0], cg = w.shape()[1], kh = w.shape()[2], kw = w.shape()[3];
  const auto og = oc / o.groups;
  const auto oh = (h + 2 * o.pad_h - kh) / o.stride_h + 1;
  const auto ow = (wd + 2 * o.pad_w - kw) / o.stride_w + 1;
  std::vector<double> y(static_cast<std::size_t>(n * oc * oh * ow));
  for (int64_t b0 = 0; b0 < n; ++b0)
    for (int64_t co = 0; co < oc; ++co)
      for (int64_t i = 0; i < oh; ++i)
        for (int64_t j = 0; j < ow; ++j) {
          double acc = bv.empty() ? 0.0 : bv[co];
          const int64_t g = co / og;
          for (int64_t ci = 0; ci < cg; ++ci)
            for (int64_t u = 0; u < kh; ++u)
              for (int64_t v = 0; v < kw; ++v) {
                const int64_t r = i * o.stride_h - o.pad_h + u;
                const int64_t q = j * o.stride_w - o.pad_w + v;
                if (r < 0 || r >= h || q < 0 || q >= wd) continue;
                acc += wv[((co * cg + ci) * kh + u) * kw + v] *
                       xv[((b0 * c + g * cg + ci) * h + r) * wd + q];
              }
          y[((b0 * oc + co) * oh + i) * ow + j] = acc;
        }
  (void)c;
  return y;
}

}  // namespace

TEST_CASE("conv2d matches the direct sum") {
  DtypeScope f64(DType::f64);
  Rng rng(10);
  struct Case {
    int64_t n, c, h, w, oc, k, stride, pad, groups;
  };
  for (const Case cs : {Case{2, 3, 7, 6, 4, 3, 1, 1, 1}, Case{1, 4, 9, 9, 6, 3, 2, 1, 2},
                        Case{2, 5, 8, 8, 5, 5, 1, 2, 5}, Case{1, 3, 8, 8, 2, 7, 2, 3, 1},
                        Case{1, 2, 5, 5, 3, 1, 1, 0, 1}}) {
    const Tensor x = randn({cs.n, cs.c, cs.h, cs.w}, rng);
    const Tensor w = randn({cs.oc, cs.c / cs.groups, cs.k, cs.k}, rng);
    const Tensor b = randn({cs.oc}, rng);
    nn::Conv2dOptions o{cs.stride, cs.stride, cs.pad, cs.pad, cs.groups};
    const Tensor y = nn::conv2d(x, w, b, o);
    CHECK(testutil::max_abs_diff(y.to_doubles(), naive_conv(x, w, b, o)) < 1e-12);
  }
}

TEST_CASE("conv output size rule") {
  CHECK(nn::conv_output_size(224, 7, 2, 3) == 112);
  CHECK(nn::conv_output_size(56, 3, 2, 1) == 28);
  CHECK(nn::conv_output_size(56, 1, 2, 0) == 28);
  CHECK(nn::conv_output_size(5, 3, 1, 1) == 5);
  try {
    (void)nn::conv_output_size(6, 3, 2, 0);
    FAIL("accepted a size that drops input");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::NonIntegralOutputSize);
  }
}

TEST_CASE("conv2d gradients") {
  DtypeScope f64(DType::f64);
  Rng rng(11);
  for (int64_t groups : {1, 2, 4}) {
    const Tensor x = randn({2, 4, 5, 5}, rng);
    const Tensor w = randn({4, 4 / groups, 3, 3}, rng);
    const Tensor b = randn({4}, rng);
    nn::Conv2dOptions o{2, 2, 1, 1, groups};
    const auto rep = grad_check(
        [&](auto in) { return testutil::probe(nn::conv2d(in[0], in[1], in[2], o)); },
        {x, w, b});
    INFO("groups " << groups << " worst " << rep.worst << " rel " << rep.max_rel_error);
    CHECK(rep.passed);
  }
}

TEST_CASE("batch norm statistics and running estimates") {
  DtypeScope f64(DType::f64);
  Rng rng(12);
  const Tensor x = randn({3, 2, 4, 4}, rng, 2.0);
  auto p = nn::NormParams::batch("bn", 2);
  const Tensor y = nn::batch_norm(x, p, nn::Mode::train);
  const auto yv = y.to_doubles(), xv = x.to_doubles();
  for (int c = 0; c < 2; ++c) {
    double m = 0, v = 0, xm = 0, xv2 = 0;
    for (int b = 0; b < 3; ++b)
      for (int k = 0; k < 16; ++k) {
        const double t = yv[(b * 2 + c) * 16 + k];
        m += t;
        v += t * t;
        xm += xv[(b * 2 + c) * 16 + k];
      }
    m /= 48;
    xm /= 48;
    for (int b = 0; b < 3; ++b)
      for (int k = 0; k < 16; ++k) xv2 += std::pow(xv[(b * 2 + c) * 16 + k] - xm, 2);
    CHECK(std::abs(m) < 1e-12);
    CHECK(v / 48 == doctest::Approx(1.0).epsilon(1e-4));
    CHECK(p.running_mean.value.to_doubles()[c] == doctest::Approx(0.1 * xm));
    CHECK(p.running_var.value.to_doubles()[c] == doctest::Approx(0.9 + 0.1 * xv2 / 47));
  }
  const Tensor e1 = nn::batch_norm(x, p, nn::Mode::eval);
  const Tensor e2 = nn::batch_norm(x, p, nn::Mode::eval);
  CHECK(testutil::max_abs_diff(e1, e2) == 0.0);
}

TEST_CASE("norm gradients") {
  DtypeScope f64(DType::f64);
  Rng rng(13);
  auto bn = nn::NormParams::batch("bn", 3);
  bn.gamma.value = randn({3}, rng);
  bn.beta.value = randn({3}, rng);
  Parameter* bnp[] = {&bn.gamma, &bn.beta};
  auto rep = grad_check(
      [&](auto in) { return testutil::probe(nn::batch_norm(in[0], bn, nn::Mode::train)); },
      {randn({2, 3, 3, 3}, rng)}, {}, bnp);
  INFO("bn " << rep.worst << " " << rep.max_rel_error);
  CHECK(rep.passed);

  auto ln = nn::NormParams::layer("ln", 5);
  ln.gamma.value = randn({5}, rng);
  Parameter* lnp[] = {&ln.gamma, &ln.beta};
  rep = grad_check([&](auto in) { return testutil::probe(nn::layer_norm(in[0], ln)); },
                   {randn({2, 3, 5}, rng)}, {}, lnp);
  INFO("ln " << rep.worst << " " << rep.max_rel_error);
  CHECK(rep.passed);
}

TEST_CASE("max pool and upsample") {
  DtypeScope f64(DType::f64);
  const Tensor x = Tensor::from_values({1, 1, 2, 2}, {1, 2, 3, 4});
  const auto up = nn::bilinear_upsample2x(x).to_doubles();
  // align_corners=false reference on a 2x2 map
  const std::vector<double> ref{1.0,  1.25, 1.75, 2.0,  1.5, 1.75, 2.25, 2.5,
                                2.5, 2.75, 3.25, 3.5, 3.0, 3.25, 3.75, 4.0};
  CHECK(testutil::max_abs_diff(up, ref) < 1e-12);

  const Tensor m = Tensor::from_values({1, 1, 4, 4}, {1, 5, 2, 0, 3, 4, 9, 9, 0, 0, 1, 2, 7, 0, 3, 3});
  CHECK(nn::max_pool2d(m).to_doubles() == std::vector<double>{5, 9, 7, 3});
  nn::PoolOptions o{3, 3, 2, 2, 1, 1};
  CHECK(nn::max_pool2d(m, o).shape() == Shape{1, 1, 2, 2});

  Rng rng(14);
  for (const auto& fn : std::vector<ScalarFn>{
           [](auto in) { return testutil::probe(nn::bilinear_upsample2x(in[0])); },
           [&](auto in) { return testutil::probe(nn::max_pool2d(in[0], o)); },
           [](auto in) { return testutil::probe(nn::max_pool2d(in[0])); }}) {
    const auto rep = grad_check(fn, {randn({2, 2, 4, 6}, rng)});
    INFO(rep.worst << " " << rep.max_rel_error);
    CHECK(rep.passed);
  }
}

TEST_CASE("linear and depthwise separable") {
  DtypeScope f64(DType::f64);
  Rng rng(15);
  auto lin = nn::LinearParams::make("fc", 4, 3, rng);
  lin.bias.value = randn({3}, rng);
  Parameter* lp[] = {&lin.weight, &lin.bias};
  auto rep = grad_check([&](auto in) { return testutil::probe(nn::linear(in[0], lin)); },
                        {randn({2, 5, 4}, rng)}, {}, lp);
  CHECK(rep.passed);

  auto ds = nn::DepthwiseSeparable::make("ds", 16, 16, 3, rng);
  nn::ParamList pl;
  ds.collect(pl);
  int64_t count = 0;
  for (auto* p : pl.params) count += p->value.numel();
  CHECK(count == 16 * 9 + 16 + 16 * 16 + 16);
  rep = grad_check([&](auto in) { return testutil::probe(nn::depthwise_separable_conv(in[0], ds)); },
                   {randn({1, 16, 4, 4}, rng)}, {}, pl.params);
  INFO(rep.worst << " " << rep.max_rel_error);
  CHECK(rep.passed);
}

TEST_CASE("kaiming bound") {
  Rng rng(16);
  const Tensor w = nn::kaiming_uniform({64, 9}, 9, rng);
  const double bound = std::sqrt(6.0 / 9.0);
  for (double v : w.to_doubles()) CHECK(std::abs(v) <= bound);
}
