#include <functional>

#include "acmseg/autograd.hpp"
#include "acmseg/harness.hpp"
#include "acmseg/ops.hpp"
#include "acmseg/ssm.hpp"
#include "acmseg/wavelet.hpp"

namespace acm::harness {

namespace {

Tensor randn(Shape s, Rng& rng, double sd = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(numel(s)));
  for (auto& x : v) x = rng.normal(0.0, sd);
  return Tensor::from_doubles(std::move(s), v);
}

Tensor randu(Shape s, Rng& rng, double lo, double hi) {
  std::vector<double> v(static_cast<std::size_t>(numel(s)));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::from_doubles(std::move(s), v);
}

// sum(y * w) with fixed weights so each output coordinate carries its own gradient
Tensor probe(const Tensor& y) {
  Rng rng(99);
  return sum(mul(y, randn(y.shape(), rng)));
}

class Suite {
 public:
  explicit Suite(std::uint64_t seed) : rng(seed) {}

  void check(const std::string& name, double tol, const std::function<Tensor(std::span<const Tensor>)>& f,
             std::vector<Tensor> inputs, std::span<Parameter* const> params = {},
             std::size_t max_coords = 0) {
    GradCheckOptions opt;
    opt.tol = tol;
    opt.max_coords = max_coords;
    GradSuiteEntry e{name, tol, {}};
    try {
      e.report = grad_check([&](std::span<const Tensor> in) { return probe(f(in)); }, std::move(inputs), opt,
                            params);
    } catch (const Error& err) {
      e.report.passed = false;
      e.report.worst = err.what();
    }
    entries.push_back(std::move(e));
  }

  Rng rng;
  std::vector<GradSuiteEntry> entries;
};

}  // namespace

std::vector<GradSuiteEntry> run_grad_suite(std::uint64_t seed) {
  DtypeScope f64(DType::f64);
  Suite s(seed);
  Rng& rng = s.rng;
  constexpr double kModule = 1e-4;

  s.check("elementwise", 1e-6,
          [](auto in) { return add(mul(silu(in[0]), softplus(in[1])), div(sigmoid(in[0]), add_scalar(exp(in[1]), 1.0))); },
          {randn({3, 4}, rng), randn({3, 4}, rng)});
  s.check("softmax", 1e-6, [](auto in) { return add(softmax(in[0], 1), log_softmax(in[0], 0)); },
          {randn({3, 5}, rng)});
  s.check("matmul", 1e-6, [](auto in) { return matmul(in[0], in[1]); }, {randn({3, 4}, rng), randn({4, 5}, rng)});

  for (std::int64_t groups : {1, 2}) {
    auto conv = nn::Conv2dParams::make("conv", 4, 6, 3, rng, true, 2, groups);
    nn::ParamList pl;
    conv.collect(pl);
    s.check("conv2d groups=" + std::to_string(groups), kModule,
            [&](auto in) { return nn::conv2d(in[0], conv); }, {randn({2, 4, 6, 6}, rng)}, pl.params);
  }
  {
    auto ds = nn::DepthwiseSeparable::make("dsc", 4, 5, 3, rng);
    nn::ParamList pl;
    ds.collect(pl);
    s.check("depthwise_separable", kModule, [&](auto in) { return nn::depthwise_separable_conv(in[0], ds); },
            {randn({1, 4, 5, 5}, rng)}, pl.params);
  }
  {
    auto bn = nn::NormParams::batch("bn", 3);
    bn.gamma.value = randu({3}, rng, 0.5, 1.5);
    bn.beta.value = randn({3}, rng);
    nn::ParamList pl;
    bn.collect(pl);
    s.check("batch_norm", kModule, [&](auto in) { return nn::batch_norm(in[0], bn, nn::Mode::train); },
            {randn({2, 3, 3, 3}, rng)}, pl.params);
    auto ln = nn::NormParams::layer("ln", 5);
    ln.gamma.value = randu({5}, rng, 0.5, 1.5);
    nn::ParamList ll;
    ln.collect(ll);
    s.check("layer_norm", kModule, [&](auto in) { return nn::layer_norm(in[0], ln); }, {randn({2, 3, 5}, rng)},
            ll.params);
  }
  {
    auto lin = nn::LinearParams::make("lin", 5, 3, rng);
    nn::ParamList pl;
    lin.collect(pl);
    s.check("linear", kModule, [&](auto in) { return nn::linear(in[0], lin); }, {randn({2, 4, 5}, rng)}, pl.params);
  }
  s.check("max_pool", kModule,
          [](auto in) { return nn::max_pool2d(in[0], {3, 3, 2, 2, 1, 1}); }, {randn({1, 2, 6, 6}, rng)});
  s.check("bilinear_upsample", kModule, [](auto in) { return nn::bilinear_upsample2x(in[0]); },
          {randn({1, 2, 3, 4}, rng)});

  s.check("haar", kModule,
          [](auto in) { return add(wavelet::dwt2_haar_packed(in[0]), wavelet::dwt2_haar_packed(wavelet::idwt2_haar_packed(in[1]))); },
          {randn({1, 2, 4, 6}, rng), randn({1, 2, 4, 2, 3}, rng)});
  {
    auto wt = wavelet::WTConvParams::make("wt", 2, 3, 2, rng);
    nn::ParamList pl;
    wt.collect(pl);
    s.check("wtconv", kModule, [&](auto in) { return wavelet::wtconv(in[0], wt); }, {randn({1, 2, 8, 8}, rng)},
            pl.params);
  }
  {
    auto ms = wavelet::MSWTParams::make("mswt", 3, 1, rng);
    ms.bn.beta.value = Tensor::full({3}, 3.0);  // keep the ReLU away from its kink
    nn::ParamList pl;
    ms.collect(pl);
    s.check("mswt", kModule, [&](auto in) { return wavelet::mswt(in[0], ms, nn::Mode::train); },
            {randn({2, 3, 4, 4}, rng)}, pl.params);
  }

  s.check("selective_scan", kModule,
          [](auto in) { return ssm::selective_scan_core(in[0], in[1], in[2], in[3], in[4], in[5]); },
          {randn({4, 5, 3}, rng), randu({4, 5, 3}, rng, 0.05, 0.8), randu({2, 3, 4}, rng, -1.5, -0.2),
           randn({4, 5, 4}, rng), randn({4, 5, 4}, rng), randn({2, 3}, rng)});
  for (bool shared : {true, false}) {
    auto s6 = ssm::S6Params::make("s6", 3, 4, 2, 4, shared, rng);
    nn::ParamList pl;
    s6.collect(pl);
    s.check(std::string("ss2d ") + (shared ? "shared" : "per-direction"), kModule,
            [&](auto in) { return ssm::ss2d(in[0], s6); }, {randn({1, 3, 3, 4}, rng)}, pl.params);
  }
  {
    auto vss = ssm::VSSBlockParams::make("vss", 8, 2, 16, true, rng);
    nn::ParamList pl;
    vss.collect(pl);
    s.check("vss_block", kModule, [&](auto in) { return ssm::vss_block(in[0], vss); }, {randn({1, 4, 4, 8}, rng)},
            pl.params);
  }

  {
    auto ad = model::Adapters::make("ad", 8, 6, rng);
    nn::ParamList pl;
    ad.collect(pl);
    s.check("adapters", kModule,
            [&](auto in) { return model::adapter_to_map(model::adapter_to_tokens(in[0], ad), ad); },
            {randn({1, 8, 2, 3}, rng)}, pl.params);
  }
  {
    auto b = model::Bottleneck::make("b", 4, 2, 8, 2, rng);
    nn::ParamList pl;
    b.collect(pl);
    s.check("bottleneck", kModule, [&](auto in) { return model::bottleneck(in[0], b, nn::Mode::eval); },
            {randn({1, 4, 4, 4}, rng)}, pl.params);
  }
  {
    auto up = model::UpBlock::make("up", 8, 4, true, 1, rng);
    for (auto& m : up.mswt) m.bn.beta.value = Tensor::full({4}, 3.0);
    nn::ParamList pl;
    up.collect(pl);
    s.check("upsample_block", kModule,
            [&](auto in) { return model::upsample_block(in[0], in[1], up, nn::Mode::eval); },
            {randn({2, 8, 2, 2}, rng), randn({2, 4, 4, 4}, rng)}, pl.params);
  }
  {
    auto head = model::SegHead::make("head", 4, 3, rng);
    nn::ParamList pl;
    head.collect(pl);
    s.check("seg_head", kModule, [&](auto in) { return model::seg_head(in[0], head); },
            {randn({1, 4, 4, 4}, rng)}, pl.params);
  }
  {
    std::vector<double> lab(16);
    for (auto& v : lab) v = rng.uniform_int(0, 2);
    const Tensor y = Tensor::from_doubles({1, 4, 4}, lab);
    s.check("dice+ce loss", 1e-5, [&](auto in) { return train::total_loss(in[0], y); }, {randn({1, 3, 4, 4}, rng)});
  }
  {
    // smallest input the encoder ladder admits; batch statistics keep ReLU
    // inputs off exact zeros
    model::ModelConfig c;
    c.base_width = 4;
    c.n_vss = 1;
    c.num_classes = 3;
    c.input_size = 32;
    c.depths = {1, 1, 1};
    c.d_state = 4;
    auto m = model::Model::build(c, seed);
    m->mode = nn::Mode::train;
    s.check("end-to-end model", 1e-3, [&](auto in) { return m->forward(in[0]); },
            {randu({1, 3, 32, 32}, rng, 0.0, 1.0)}, m->parameters(), 16);
  }
  return s.entries;
}

}  // namespace acm::harness
