#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "acmseg/autograd.hpp"
#include "acmseg/model.hpp"
#include "count_oracle.hpp"
#include "helpers.hpp"

using namespace acm;
using testutil::randn;

namespace {

model::ModelConfig tiny(std::int64_t size = 32) {
  model::ModelConfig c;
  c.base_width = 4;
  c.n_vss = 1;
  c.num_classes = 3;
  c.input_size = size;
  c.depths = {1, 1, 1};
  c.d_state = 4;
  return c;
}

std::string tmp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("config validation") {
  auto c = tiny();
  c.input_size = 40;
  CHECK_THROWS_AS(model::Model::build(c, 1), Error);
  c = tiny();
  c.base_width = 3;
  CHECK_THROWS_AS(model::Model::build(c, 1), Error);
  c = tiny();
  c.n_vss = -1;
  CHECK_THROWS_AS(model::Model::build(c, 1), Error);
  model::ModelConfig d;
  CHECK(model::set_config_key(d, "depths", "1,2,3"));
  CHECK(d.depths == std::array<std::int64_t, 3>{1, 2, 3});
  CHECK_FALSE(model::set_config_key(d, "nope", "1"));
  CHECK_THROWS_AS(model::set_config_key(d, "base_width", "x"), Error);
}

TEST_CASE("parameter count matches the closed form") {
  auto c = tiny();
  c.n_vss = 0;
  c.use_mswt = false;
  auto m = model::Model::build(c, 3);
  CHECK(m->count_params() == testutil::closed_form_count({4, 0, 3, 1, 1, 1, false, true}));
  for (bool mswt : {false, true})
    for (bool vss : {false, true})
      for (bool shared : {false, true}) {
        auto cfg = tiny();
        cfg.base_width = 8;
        cfg.n_vss = 2;
        cfg.depths = {2, 1, 3};
        cfg.use_mswt = mswt;
        cfg.use_vss = vss;
        cfg.share_scan_proj = shared;
        cfg.wavelet_levels = 2;
        auto mm = model::Model::build(cfg, 3);
        testutil::CountCase s{8, 2, 3, 2, 1, 3, mswt, vss};
        s.levels = 2;
        s.d_state = 4;
        s.shared = shared;
        CHECK(mm->count_params() == testutil::closed_form_count(s));
      }
  auto c8 = tiny(), c16 = tiny();
  c8.base_width = 8;
  c16.base_width = 16;
  CHECK(model::Model::build(c8, 1)->count_params() < model::Model::build(c16, 1)->count_params());
}

TEST_CASE("toggles remove parameter groups") {
  auto c = tiny();
  c.use_vss = false;
  c.use_mswt = false;
  auto m = model::Model::build(c, 5);
  for (const Parameter* p : m->parameters()) {
    CHECK(p->name.find("vss") == std::string::npos);
    CHECK(p->name.find("adapter") == std::string::npos);
    CHECK(p->name.find("mswt") == std::string::npos);
  }
}

TEST_CASE("dimension ladder on desk configs") {
  for (std::int64_t size : {16, 32, 64})
    for (std::int64_t C : {4, 8}) {
      auto c = tiny(size);
      c.base_width = C;
      auto m = model::Model::build(c, 1);
      const auto f = m->encode(Tensor::zeros({2, 3, size, size}));
      CHECK(f.f1.shape() == Shape{2, C, size / 2, size / 2});
      CHECK(f.f2.shape() == Shape{2, 4 * C, size / 4, size / 4});
      CHECK(f.f3.shape() == Shape{2, 8 * C, size / 8, size / 8});
      CHECK(f.f4.shape() == Shape{2, 16 * C, size / 16, size / 16});
    }
  auto c = tiny();
  c.base_width = 8;
  auto m = model::Model::build(c, 1);
  CHECK(m->encode(Tensor::zeros({1, 3, 32, 32})).f4.shape() == Shape{1, 128, 2, 2});
  CHECK_THROWS_AS(m->encode(Tensor::zeros({1, 3, 16, 16})), Error);
}

TEST_CASE("determinism and eval purity") {
  Rng rng(40);
  const Tensor x = testutil::randu({2, 3, 32, 32}, rng, 0.0, 1.0);
  auto a = model::Model::build(tiny(), 11), b = model::Model::build(tiny(), 11);
  for (std::size_t i = 0; i < a->parameters().size(); ++i)
    REQUIRE(testutil::max_abs_diff(a->parameters()[i]->value, b->parameters()[i]->value) == 0.0);
  a->mode = b->mode = nn::Mode::eval;
  const Tensor ya = a->forward(x);
  CHECK(ya.shape() == Shape{2, 3, 32, 32});
  CHECK(testutil::max_abs_diff(ya, b->forward(x)) == 0.0);
  CHECK(testutil::max_abs_diff(ya, a->forward(x)) == 0.0);
  for (double v : ya.to_doubles()) REQUIRE(std::isfinite(v));

  // eval mode has no cross-sample coupling; f64 keeps large untrained logits exact
  DtypeScope f64(DType::f64);
  a = model::Model::build(tiny(), 11);
  a->mode = nn::Mode::eval;
  const Tensor xd = x.to(DType::f64);
  const Tensor yd = a->forward(xd);
  const Tensor y0 = a->forward(slice(xd, 0, 0, 1));
  const Tensor y1 = a->forward(slice(xd, 0, 1, 1));
  const Tensor parts[] = {y0, y1};
  CHECK(testutil::max_abs_diff(concat(parts, 0), yd) < 1e-5);
}

TEST_CASE("adapters, upsample block and seg head") {
  DtypeScope f64(DType::f64);
  Rng rng(41);
  auto ad = model::Adapters::make("ad", 8, 8, rng);
  std::vector<double> eye(64, 0.0);
  for (int i = 0; i < 8; ++i) eye[i * 9] = 1.0;
  ad.to_tokens.weight.value = Tensor::from_doubles({8, 8}, eye);
  ad.to_map.weight.value = Tensor::from_doubles({8, 8}, eye);
  // channel-normalized input survives both adapters
  Tensor f = randn({1, 3, 2, 8}, rng);
  f = nn::layer_norm(f, Tensor::ones({8}), Tensor::zeros({8}), 0.0);
  f = permute(f, {0, 3, 1, 2});
  CHECK(testutil::max_abs_diff(model::adapter_to_map(model::adapter_to_tokens(f, ad), ad), f) <
        1e-5);
  CHECK(model::adapter_to_tokens(randn({2, 8, 3, 5}, rng), ad).shape() == Shape{2, 3, 5, 8});

  auto up = model::UpBlock::make("up", 16, 8, true, 1, rng);
  CHECK(model::upsample_block(randn({1, 16, 2, 2}, rng), randn({1, 8, 4, 4}, rng), up,
                              nn::Mode::train)
            .shape() == Shape{1, 8, 4, 4});
  CHECK_THROWS_AS(model::upsample_block(randn({1, 16, 2, 2}, rng), randn({1, 8, 6, 6}, rng), up,
                                        nn::Mode::train),
                  Error);

  // with MSWT off the block ends after the residual block
  auto plain = model::UpBlock::make("up", 16, 8, false, 1, rng);
  const Tensor prev = randn({2, 16, 2, 2}, rng), skip = randn({2, 8, 4, 4}, rng);
  const Tensor parts[] = {nn::bilinear_upsample2x(nn::conv2d(prev, plain.reduce)), skip};
  const Tensor manual = model::basic_block(
      nn::depthwise_separable_conv(concat(parts, 1), plain.fuse), plain.res, nn::Mode::train);
  CHECK(testutil::max_abs_diff(model::upsample_block(prev, skip, plain, nn::Mode::train),
                               manual) == 0.0);

  auto head = model::SegHead::make("head", 16, 9, rng);
  CHECK(model::seg_head(randn({1, 16, 16, 16}, rng), head).shape() == Shape{1, 9, 32, 32});
  head.classifier.weight.value = Tensor::zeros(head.classifier.weight.value.shape());
  const auto logits = model::seg_head(randn({1, 16, 4, 4}, rng), head).to_doubles();
  for (double v : logits) CHECK(v == 0.0);
}

TEST_CASE("module gradients") {
  DtypeScope f64(DType::f64);
  Rng rng(42);
  GradCheckOptions opt;
  opt.tol = 1e-4;

  auto ad = model::Adapters::make("ad", 8, 6, rng);
  nn::ParamList al;
  ad.collect(al);
  auto rep = grad_check(
      [&](auto in) {
        return testutil::probe(model::adapter_to_map(model::adapter_to_tokens(in[0], ad), ad));
      },
      {randn({1, 8, 2, 3}, rng)}, opt, al.params);
  INFO("adapters " << rep.worst << " " << rep.max_rel_error);
  CHECK(rep.passed);

  auto head = model::SegHead::make("head", 4, 3, rng);
  nn::ParamList hl;
  head.collect(hl);
  rep = grad_check([&](auto in) { return testutil::probe(model::seg_head(in[0], head)); },
                   {randn({1, 4, 4, 4}, rng)}, opt, hl.params);
  INFO("head " << rep.worst << " " << rep.max_rel_error);
  CHECK(rep.passed);

  auto up = model::UpBlock::make("up", 8, 4, true, 1, rng);
  for (auto& m : up.mswt) m.bn.beta.value = Tensor::full({4}, 3.0);
  nn::ParamList ul;
  up.collect(ul);
  rep = grad_check(
      [&](auto in) {
        return testutil::probe(model::upsample_block(in[0], in[1], up, nn::Mode::eval));
      },
      {randn({2, 8, 2, 2}, rng), randn({2, 4, 4, 4}, rng)}, opt, ul.params);
  INFO("upblock " << rep.worst << " " << rep.max_rel_error);
  CHECK(rep.passed);

  auto bott = model::Bottleneck::make("b", 4, 2, 8, 2, rng);
  nn::ParamList bl;
  bott.collect(bl);
  rep = grad_check(
      [&](auto in) { return testutil::probe(model::bottleneck(in[0], bott, nn::Mode::eval)); },
      {randn({1, 4, 4, 4}, rng)}, opt, bl.params);
  INFO("bottleneck " << rep.worst << " " << rep.max_rel_error);
  CHECK(rep.passed);
}

TEST_CASE("checkpoint roundtrip and corruption") {
  auto m = model::Model::build(tiny(), 9);
  Rng rng(43);
  // perturb running stats so buffers are exercised
  m->forward(testutil::randu({2, 3, 32, 32}, rng, 0.0, 1.0));
  m->mode = nn::Mode::eval;
  const Tensor x = testutil::randu({1, 3, 32, 32}, rng, 0.0, 1.0);
  const Tensor y = m->forward(x);
  const std::string path = tmp_path("acmseg_ckpt_test.acmc");
  model::CheckpointState st;
  st.step = 17;
  st.extra.emplace_back("optim.m.test", Tensor::from_values({2}, {1.5, -2}));
  model::save_checkpoint(path, *m, st);

  auto loaded = model::load_checkpoint(path);
  CHECK(loaded.state.step == 17);
  REQUIRE(loaded.state.extra.size() == 1);
  CHECK(loaded.state.extra[0].first == "optim.m.test");
  loaded.model->mode = nn::Mode::eval;
  CHECK(testutil::max_abs_diff(loaded.model->forward(x), y) == 0.0);

  auto other = tiny();
  other.base_width = 8;
  auto wrong = model::Model::build(other, 9);
  try {
    model::load_checkpoint_into(path, *wrong);
    FAIL("config mismatch accepted");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::ConfigMismatch);
  }

  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(200);
    char c = 0;
    f.read(&c, 1);
    f.seekp(200);
    c ^= 0x5a;
    f.write(&c, 1);
  }
  try {
    (void)model::load_checkpoint(path);
    FAIL("corruption accepted");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::ChecksumMismatch);
  }
  std::remove(path.c_str());
}
