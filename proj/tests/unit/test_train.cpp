#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "acmseg/autograd.hpp"
#include "acmseg/train.hpp"
#include "helpers.hpp"
#include "metric_oracle.hpp"

using namespace acm;
using testutil::randn;

namespace {

train::Mask random_mask(Rng& rng, int h, int w, double p) {
  train::Mask m{h, w, std::vector<std::uint8_t>(static_cast<std::size_t>(h * w))};
  for (auto& v : m.data) v = rng.uniform(0, 1) < p ? 1 : 0;
  return m;
}

train::Mask blob(int h, int w, int r0, int c0, int r1, int c1) {
  train::Mask m{h, w, std::vector<std::uint8_t>(static_cast<std::size_t>(h * w))};
  for (int r = r0; r < r1; ++r)
    for (int c = c0; c < c1; ++c) m.data[r * w + c] = 1;
  return m;
}

Tensor labels_tensor(Shape s, const std::vector<double>& v) { return Tensor::from_doubles(s, v); }

// f64 direct-summation references
double ce_ref(const Tensor& logits, const std::vector<double>& lab) {
  const auto l = logits.to_doubles();
  const auto n = logits.shape()[0], k = logits.shape()[1];
  const auto hw = logits.shape()[2] * logits.shape()[3];
  double total = 0;
  for (int64_t b = 0; b < n; ++b)
    for (int64_t i = 0; i < hw; ++i) {
      double lse = 0;
      for (int64_t c = 0; c < k; ++c) lse += std::exp(l[(b * k + c) * hw + i]);
      total += std::log(lse) - l[(b * k + static_cast<int64_t>(lab[b * hw + i])) * hw + i];
    }
  return total / static_cast<double>(n * hw);
}

double dice_ref(const Tensor& logits, const std::vector<double>& lab, double eps) {
  const auto l = logits.to_doubles();
  const auto n = logits.shape()[0], k = logits.shape()[1];
  const auto hw = logits.shape()[2] * logits.shape()[3];
  std::vector<double> inter(k, 0), ps(k, 0), gs(k, 0);
  for (int64_t b = 0; b < n; ++b)
    for (int64_t i = 0; i < hw; ++i) {
      double z = 0;
      for (int64_t c = 0; c < k; ++c) z += std::exp(l[(b * k + c) * hw + i]);
      for (int64_t c = 0; c < k; ++c) {
        const double p = std::exp(l[(b * k + c) * hw + i]) / z;
        const double g = lab[b * hw + i] == c ? 1.0 : 0.0;
        inter[c] += p * g;
        ps[c] += p;
        gs[c] += g;
      }
    }
  double s = 0;
  for (int64_t c = 0; c < k; ++c) s += (2 * inter[c] + eps) / (ps[c] + gs[c] + eps);
  return 1.0 - s / static_cast<double>(k);
}

}  // namespace

TEST_CASE("dsc hand cases and symmetry") {
  train::Mask p = blob(4, 4, 0, 0, 2, 2);  // 4 pixels
  train::Mask g{4, 4, std::vector<std::uint8_t>(16, 0)};
  for (int i : {0, 1, 4, 8, 9, 10}) g.data[i] = 1;  // 6 pixels, 3 shared
  CHECK(train::dsc_metric(p, g) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(train::dsc_metric(p, p) == 1.0);
  CHECK(train::dsc_metric(blob(4, 4, 0, 0, 1, 1), blob(4, 4, 3, 3, 4, 4)) == 0.0);
  const train::Mask empty{4, 4, std::vector<std::uint8_t>(16, 0)};
  CHECK(train::dsc_metric(empty, empty) == 1.0);
  CHECK(train::dsc_metric(empty, p) == 0.0);
  Rng rng(50);
  for (int i = 0; i < 50; ++i) {
    const auto a = random_mask(rng, 8, 8, 0.3), b = random_mask(rng, 8, 8, 0.5);
    CHECK(train::dsc_metric(a, b) == train::dsc_metric(b, a));
  }
  CHECK_THROWS_AS(train::dsc_metric(p, blob(3, 4, 0, 0, 1, 1)), Error);
}

TEST_CASE("hd95 hand cases") {
  CHECK(*train::hd95(blob(8, 8, 0, 0, 1, 1), blob(8, 8, 3, 4, 4, 5)) == 5.0);
  const auto m = blob(10, 10, 2, 2, 7, 8);
  CHECK(*train::hd95(m, m) == 0.0);
  const train::Mask empty{10, 10, std::vector<std::uint8_t>(100, 0)};
  CHECK_FALSE(train::hd95(empty, m).has_value());
  CHECK_FALSE(train::hd95(m, empty).has_value());
  // a full-image mask is all boundary? no: only its outer ring
  const auto full = blob(5, 5, 0, 0, 5, 5);
  CHECK(train::boundary_pixels(full).size() == 16);
  CHECK(*train::hd95(blob(8, 8, 0, 0, 1, 1), blob(8, 8, 3, 4, 4, 5), {2.0, 0.5}) ==
        doctest::Approx(std::sqrt(36.0 + 4.0)));
}

TEST_CASE("hd95 matches the all-pairs oracle") {
  Rng rng(51);
  for (int i = 0; i < 100; ++i) {
    const double pa = rng.uniform(0.05, 0.9), pb = rng.uniform(0.05, 0.9);
    const auto a = random_mask(rng, 16, 16, pa), b = random_mask(rng, 16, 16, pb);
    for (int pct : {95, 100}) {
      const auto got = train::boundary_percentile(a, b, {1.0, 1.0}, pct / 100.0);
      const auto ref = testutil::brute_percentile(a.data, b.data, 16, 16, 1.0, 1.0, pct);
      REQUIRE(got.has_value() == ref.has_value());
      if (got) CHECK(*got == *ref);
    }
    const auto got = train::boundary_percentile(a, b, {0.75, 1.5}, 0.95);
    const auto ref = testutil::brute_percentile(a.data, b.data, 16, 16, 0.75, 1.5, 95);
    if (got) CHECK(*got == doctest::Approx(*ref).epsilon(1e-12));
  }
}

TEST_CASE("loss values") {
  DtypeScope f64(DType::f64);
  Rng rng(52);
  for (int64_t k : {2, 3, 9}) {
    const Tensor logits = Tensor::zeros({2, k, 3, 3});
    std::vector<double> lab(18);
    for (auto& v : lab) v = rng.uniform_int(0, static_cast<int>(k) - 1);
    CHECK(std::abs(train::ce_loss(logits, labels_tensor({2, 3, 3}, lab)).item() -
                   std::log(static_cast<double>(k))) < 1e-9);
  }
  const Tensor logits = randn({2, 4, 5, 5}, rng, 2.0);
  std::vector<double> lab(50);
  for (auto& v : lab) v = rng.uniform_int(0, 3);
  const Tensor y = labels_tensor({2, 5, 5}, lab);
  const double ce = train::ce_loss(logits, y).item(), dice = train::dice_loss(logits, y).item();
  CHECK(std::abs(ce - ce_ref(logits, lab)) < 1e-9);
  CHECK(std::abs(dice - dice_ref(logits, lab, 1.0)) < 1e-9);
  CHECK(train::total_loss(logits, y, {0.0, 1.0}).item() == ce);
  CHECK(train::total_loss(logits, y, {1.0, 1.0}).item() == dice);
  const double mid = train::total_loss(logits, y, {0.5, 1.0}).item();
  CHECK(std::abs(mid - 0.5 * (ce + dice)) < 1e-9);

  // uniform logits, balanced two-class target
  std::vector<double> half(16);
  for (int i = 0; i < 16; ++i) half[i] = i < 8 ? 0 : 1;
  const double d2 = train::dice_loss(Tensor::zeros({1, 2, 4, 4}), labels_tensor({1, 4, 4}, half)).item();
  CHECK(d2 == doctest::Approx(dice_ref(Tensor::zeros({1, 2, 4, 4}), half, 1.0)));
  CHECK(std::abs(d2 - 0.5) < 0.05);

  // saturated correct logits
  std::vector<double> sat(2 * 16, 0.0);
  for (int i = 0; i < 16; ++i) sat[(half[i] == 0 ? 0 : 16) + i] = 20.0;
  const Tensor satl = Tensor::from_doubles({1, 2, 4, 4}, sat);
  CHECK(train::dice_loss(satl, labels_tensor({1, 4, 4}, half)).item() <= 0.01);
  CHECK(train::ce_loss(satl, labels_tensor({1, 4, 4}, half)).item() < 1e-6);

  // class absent from both target and hard prediction contributes no loss
  std::vector<double> only0(16, 0.0), sat3(3 * 16, 0.0);
  for (int i = 0; i < 16; ++i) sat3[i] = 30.0;
  CHECK(train::dice_loss(Tensor::from_doubles({1, 3, 4, 4}, sat3), labels_tensor({1, 4, 4}, only0))
            .item() < 1e-6);

  try {
    std::vector<double> badlab(16, 5.0);
    (void)train::ce_loss(Tensor::zeros({1, 2, 4, 4}), labels_tensor({1, 4, 4}, badlab));
    FAIL("out of range label accepted");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::LabelOutOfRange);
  }
}

TEST_CASE("loss gradient matches finite differences") {
  DtypeScope f64(DType::f64);
  Rng rng(53);
  for (int i = 0; i < 5; ++i) {
    std::vector<double> lab(16);
    for (auto& v : lab) v = rng.uniform_int(0, 1);
    const Tensor y = labels_tensor({1, 4, 4}, lab);
    GradCheckOptions opt;
    opt.tol = 1e-5;
    const auto rep = grad_check(
        [&](auto in) { return train::total_loss(in[0], y, {0.5, 1.0}); },
        {randn({1, 2, 4, 4}, rng)}, opt);
    CHECK(rep.passed);
  }
}

TEST_CASE("adamw behaviour") {
  DtypeScope f64(DType::f64);
  Parameter p("w", Tensor::from_values({1}, {2.0}));
  Parameter* ps[] = {&p};
  train::AdamW zero_wd(0.0);
  p.grad = Tensor::zeros({1});
  zero_wd.step(ps, 0.1);
  CHECK(p.value.item() == 2.0);

  train::AdamW first(0.0);
  p.grad = Tensor::ones({1});
  first.step(ps, 0.01);
  CHECK(p.value.item() == doctest::Approx(2.0 - 0.01).epsilon(1e-9));

  train::AdamW decay(0.1);
  Parameter q("w", Tensor::from_values({2}, {1.5, -3.0}));
  Parameter* qs[] = {&q};
  q.grad = Tensor::zeros({2});
  std::vector<double> expect{1.5, -3.0};
  for (int t = 0; t < 7; ++t) {
    decay.step(qs, 0.05);
    for (auto& e : expect) e *= 1.0 - 0.05 * 0.1;
  }
  CHECK(q.value.to_doubles() == expect);

  Parameter bias("b", Tensor::from_values({1}, {1.0}), false);
  Parameter* bs[] = {&bias};
  train::AdamW exempt(0.5);
  bias.grad = Tensor::zeros({1});
  exempt.step(bs, 0.1);
  CHECK(bias.value.item() == 1.0);

  // quadratic 0.5 p^2: gradient p
  Parameter r("r", Tensor::from_values({1}, {1.0}));
  Parameter* rs[] = {&r};
  train::AdamW quad(0.0);
  double prev = 1.0;
  for (int t = 0; t < 10; ++t) {
    r.grad = r.value.clone();
    quad.step(rs, 0.1);
    CHECK(std::abs(r.value.item()) < prev);
    prev = std::abs(r.value.item());
  }
}

TEST_CASE("cosine schedule") {
  CHECK(train::cosine_lr(0, 100, 5e-4) == 5e-4);
  CHECK(train::cosine_lr(100, 100, 5e-4) == doctest::Approx(0.0));
  CHECK(train::cosine_lr(50, 100, 5e-4) == doctest::Approx(2.5e-4));
  CHECK(train::cosine_lr(100, 100, 5e-4, 1e-5) == doctest::Approx(1e-5));
}

TEST_CASE("metrics report on perfect predictions") {
  std::vector<std::int32_t> lab(64, 0);
  for (int i = 10; i < 30; ++i) lab[i] = 1;
  for (int i = 40; i < 60; ++i) lab[i] = 2;
  train::MetricsAccumulator acc(3, {1.0, 1.0});
  acc.add(lab, lab, 8, 8);
  acc.add(lab, lab, 8, 8);
  const auto r = acc.report();
  CHECK(r.mean_dsc == 1.0);
  CHECK(r.mean_hd95 == 0.0);
  CHECK(r.undefined_hd95 == 0);
  CHECK(r.cases == 4);
}

TEST_CASE("training smoke run") {
  model::ModelConfig c;
  c.base_width = 4;
  c.n_vss = 1;
  c.num_classes = 3;
  c.input_size = 32;
  c.depths = {1, 1, 1};
  c.d_state = 4;
  auto m = model::Model::build(c, 1);
  Rng rng(54);
  train::Dataset d;
  std::vector<double> lab(32 * 32);
  for (auto& v : lab) v = rng.uniform_int(0, 2);
  d.images.push_back(testutil::randu({3, 32, 32}, rng, 0.0, 1.0));
  d.masks.push_back(Tensor::from_doubles({32, 32}, lab));

  const auto dir = (std::filesystem::temp_directory_path() / "acmseg_train_smoke").string();
  std::filesystem::remove_all(dir);
  train::TrainConfig tc;
  tc.epochs = 1;
  tc.batch = 1;
  tc.output_dir = dir;
  const auto res = train::train_loop(*m, d, d, tc);
  REQUIRE(res.epochs.size() == 1);
  CHECK(std::isfinite(res.epochs[0].train_loss));
  CHECK(std::filesystem::exists(dir + "/best.acmc"));
  CHECK(std::filesystem::exists(dir + "/last.acmc"));
  std::ifstream csv(dir + "/train_log.csv");
  std::string l1, l2;
  std::getline(csv, l1);
  std::getline(csv, l2);
  CHECK(l1 == "# alpha=0.5");
  CHECK(l2 == train::kCsvHeader);
  const auto loaded = model::load_checkpoint(dir + "/last.acmc");
  CHECK(loaded.state.extra.size() == 2 * m->parameters().size());
  std::filesystem::remove_all(dir);

  train::Dataset empty;
  try {
    train::train_loop(*m, empty, d, tc);
    FAIL("empty dataset accepted");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::EmptyDataset);
  }
}
