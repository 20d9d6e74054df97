#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <cstring>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "acmseg/harness.hpp"
#include "acmseg/ops.hpp"
#include "count_oracle.hpp"
#include "helpers.hpp"

using namespace acm;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("acmseg_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

Errc code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error raised");
  return Errc::Io;
}

int cli(std::vector<std::string> args, std::string* out = nullptr, std::string* err = nullptr) {
  args.insert(args.begin(), "acmseg");
  std::vector<const char*> argv;
  for (auto& a : args) argv.push_back(a.c_str());
  std::ostringstream o, e;
  const int rc = harness::run_cli(static_cast<int>(argv.size()), argv.data(), o, e);
  if (out) *out = o.str();
  if (err) *err = e.str();
  return rc;
}

}  // namespace

TEST_CASE("tensor file format") {
  Rng rng(60);
  const Tensor t = testutil::randn({3, 4, 5}, rng, 1.0, DType::f32);
  const auto dir = scratch("tns");
  harness::write_tensor((dir / "t.tns").string(), t);
  const Tensor back = harness::read_tensor((dir / "t.tns").string());
  REQUIRE(back.shape() == t.shape());
  const auto a = t.data<float>(), b = back.data<float>();
  CHECK(std::memcmp(a.data(), b.data(), a.size() * 4) == 0);

  const auto bytes = harness::encode_tensor(Tensor::from_values({2, 2}, {1, 2, 3, 4}, DType::f32));
  const std::vector<std::uint8_t> head{0x41, 0x43, 0x4D, 0x54, 0x01, 0x00, 0x02, 0x02,
                                       0x00, 0x00, 0x00, 0x02, 0x00, 0x00, 0x00};
  REQUIRE(bytes.size() == 15 + 16);
  CHECK(std::equal(head.begin(), head.end(), bytes.begin()));
  float one;
  std::memcpy(&one, bytes.data() + 15, 4);
  CHECK(one == 1.0f);

  auto cut = bytes;
  cut.pop_back();
  CHECK(code_of([&] { harness::decode_tensor(cut); }) == Errc::LengthMismatch);
  auto longer = bytes;
  longer.push_back(0);
  CHECK(code_of([&] { harness::decode_tensor(longer); }) == Errc::LengthMismatch);
  auto magic = bytes;
  magic[0] = 'X';
  CHECK(code_of([&] { harness::decode_tensor(magic); }) == Errc::BadMagic);
  auto version = bytes;
  version[4] = 2;
  CHECK(code_of([&] { harness::decode_tensor(version); }) == Errc::BadVersion);
  CHECK(code_of([&] { harness::decode_tensor({0x41, 0x43}); }) == Errc::LengthMismatch);
  CHECK(code_of([&] { harness::read_tensor((dir / "nope.tns").string()); }) == Errc::Io);
  fs::remove_all(dir);
}

TEST_CASE("run config parsing") {
  const auto c = harness::parse_run_config(
      "# comment\nmodel.base_width = 8\nmodel.depths=2,2,2\ntrain.lr=1e-3\ntrain.alpha=0.25\n"
      "train.seed=5\ntrain.augment=hflip,noise\ndata.spacing=0.5,2\ndata.manifest=m.tsv\n"
      "io.output_dir=out\n",
      "/base");
  CHECK(c.model.base_width == 8);
  CHECK(c.model.depths == std::array<std::int64_t, 3>{2, 2, 2});
  CHECK(c.lr == 1e-3);
  CHECK(c.alpha == 0.25);
  CHECK(c.seed == 5);
  CHECK(c.spacing == std::array<double, 2>{0.5, 2.0});
  CHECK(c.manifest == "/base/m.tsv");
  CHECK(c.output_dir == "/base/out");
  CHECK(harness::parse_run_config(harness::to_text(c)).model == c.model);
  const auto round = harness::parse_run_config(harness::to_text(c));
  CHECK(round.lr == c.lr);
  CHECK(round.augment == c.augment);

  for (const char* bad : {"model.nope=1", "train.nope=1", "nonsense", "train.lr=abc", "train.epochs=1.5",
                          "train.alpha=2", "model.input_size=40", "train.augment=blur", "data.spacing=1",
                          "model.use_vss=maybe", "train.batch=0"}) {
    INFO(bad);
    CHECK(code_of([&] { harness::parse_run_config(bad); }) == Errc::InvalidConfig);
  }
}

TEST_CASE("phantom generation") {
  const auto a = scratch("ph_a"), b = scratch("ph_b");
  const auto man = harness::gen_phantoms(11, 20, 32, 4, a.string());
  harness::gen_phantoms(11, 20, 32, 4, b.string());
  REQUIRE(man.entries.size() == 20);
  // byte-identical trees
  for (const auto& entry : fs::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), a);
    CHECK(slurp(entry.path()) == slurp(b / rel));
  }
  std::int64_t counts[3] = {0, 0, 0};
  for (const auto& e : man.entries) ++counts[static_cast<int>(e.split)];
  CHECK(counts[0] == 14);
  CHECK(counts[1] == 2);
  CHECK(counts[2] == 4);

  // analytic membership from the sidecar, independent of the generator
  std::map<int, std::vector<std::array<double, 6>>> ell;
  std::ifstream side(a / "ellipses.tsv");
  std::string line;
  std::getline(side, line);
  while (std::getline(side, line)) {
    std::istringstream ss(line);
    int idx;
    std::array<double, 6> e;
    ss >> idx >> e[0] >> e[1] >> e[2] >> e[3] >> e[4] >> e[5];
    ell[idx].push_back(e);
  }
  REQUIRE(ell.size() == 20);
  std::array<std::int64_t, 4> hist{};
  const auto m = harness::read_manifest((a / "manifest.tsv").string());
  for (int i = 0; i < 20; ++i) {
    REQUIRE(ell[i].size() == 3);
    const Tensor mask = harness::read_tensor(m.resolve(m.entries[i].mask));
    const Tensor img = harness::read_tensor(m.resolve(m.entries[i].image));
    CHECK(img.shape() == Shape{3, 32, 32});
    const auto mv = mask.to_doubles();
    const auto iv = img.to_doubles();
    for (double v : iv) CHECK((v >= 0.0 && v <= 1.0));
    int mismatches = 0;
    for (int r = 0; r < 32; ++r)
      for (int c = 0; c < 32; ++c) {
        int expect = 0, hits = 0;
        for (const auto& e : ell[i]) {
          const double dy = r - e[1], dx = c - e[2];
          const double u = (dy * std::cos(e[5]) + dx * std::sin(e[5])) / e[3];
          const double v = (-dy * std::sin(e[5]) + dx * std::cos(e[5])) / e[4];
          if (u * u + v * v <= 1.0) {
            expect = static_cast<int>(e[0]);
            ++hits;
          }
        }
        CHECK(hits <= 1);
        if (mv[r * 32 + c] != expect) ++mismatches;
        ++hist[static_cast<std::size_t>(mv[r * 32 + c])];
      }
    CHECK(mismatches == 0);
  }
  for (auto h : hist) CHECK(h > 0);

  // background statistics
  const auto p = harness::make_phantom(5, 0, 64, 3);
  const auto iv = p.image.to_doubles(), mv = p.mask.to_doubles();
  double s = 0, s2 = 0;
  std::int64_t n = 0;
  for (int ch = 0; ch < 3; ++ch)
    for (int i = 0; i < 64 * 64; ++i)
      if (mv[i] == 0) {
        s += iv[ch * 4096 + i];
        s2 += iv[ch * 4096 + i] * iv[ch * 4096 + i];
        ++n;
      }
  const double mean = s / n, sd = std::sqrt(s2 / n - mean * mean);
  CHECK(mean == doctest::Approx(0.2).epsilon(0.02));
  CHECK(sd == doctest::Approx(0.05).epsilon(0.1));

  const auto full = harness::make_phantom(1, 3, 64, 9);
  CHECK(full.ellipses.size() == 8);
  CHECK(code_of([] { harness::make_phantom(1, 0, 40, 4); }) == Errc::InvalidConfig);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("manifest loading validates contents") {
  const auto dir = scratch("man");
  harness::gen_phantoms(2, 10, 32, 3, dir.string());
  auto m = harness::read_manifest((dir / "manifest.tsv").string());
  const auto train = harness::load_split(m, harness::Split::train, 3);
  CHECK(train.size() == 7);
  CHECK(code_of([&] { harness::load_split(m, harness::Split::train, 2); }) == Errc::LabelOutOfRange);
  m.entries[0].mask = "masks/missing.tns";
  CHECK(code_of([&] { harness::load_split(m, harness::Split::train, 3); }) == Errc::Io);
  m = harness::read_manifest((dir / "manifest.tsv").string());
  harness::write_tensor(m.resolve(m.entries[1].image), Tensor::zeros({3, 16, 16}, DType::f32));
  CHECK(code_of([&] { harness::load_split(m, harness::Split::train, 3); }) == Errc::ShapeMismatch);
  std::ofstream(dir / "bad.tsv") << "a\tb\tholdout\n";
  CHECK(code_of([&] { harness::read_manifest((dir / "bad.tsv").string()); }) == Errc::InvalidConfig);
  fs::remove_all(dir);
}

TEST_CASE("augmentation") {
  Rng rng(61);
  const Tensor img = testutil::randu({3, 6, 6}, rng, 0, 1, DType::f32);
  std::vector<double> lab(36);
  for (auto& v : lab) v = rng.uniform_int(0, 3);
  const Tensor mask = Tensor::from_doubles({6, 6}, lab, DType::f32);

  CHECK(harness::hflip(harness::hflip(img)).to_doubles() == img.to_doubles());
  CHECK(harness::vflip(harness::vflip(mask)).to_doubles() == lab);
  CHECK(harness::rot90(harness::rot90(harness::rot90(harness::rot90(img, 1), 1), 1), 1).to_doubles() ==
        img.to_doubles());
  CHECK(harness::rot90(img, 3).to_doubles() == harness::rot90(img, -1).to_doubles());

  const auto h = harness::hflip(mask).to_doubles(), r = harness::rot90(mask, 1).to_doubles();
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) {
      CHECK(h[i * 6 + j] == lab[i * 6 + 5 - j]);
      CHECK(r[i * 6 + j] == lab[j * 6 + 5 - i]);  // counter-clockwise
    }
  const Tensor rect = Tensor::from_values({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(harness::rot90(rect, 1).shape() == Shape{3, 2});
  CHECK(harness::rot90(rect, 1).to_doubles() == std::vector<double>{3, 6, 2, 5, 1, 4});

  harness::AugmentFlags all{true, true, true, true};
  auto sorted = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v;
  };
  for (int t = 0; t < 30; ++t) {
    Tensor a = img, b = mask;
    harness::augment(a, b, rng, all);
    CHECK(sorted(b.to_doubles()) == sorted(lab));
  }
  // geometric part keeps image and mask aligned
  harness::AugmentFlags geo{true, true, true, false};
  const Tensor tag = reshape(slice(img, 0, 0, 1), {6, 6});
  for (int t = 0; t < 30; ++t) {
    Tensor a = img, b = tag;
    harness::augment(a, b, rng, geo);
    CHECK(reshape(slice(a, 0, 0, 1), {6, 6}).to_doubles() == b.to_doubles());
  }
  harness::AugmentFlags noise{false, false, false, true};
  bool changed = false;
  for (int t = 0; t < 10; ++t) {
    Tensor a = img, b = mask;
    harness::augment(a, b, rng, noise);
    CHECK(b.to_doubles() == lab);
    changed = changed || a.to_doubles() != img.to_doubles();
  }
  CHECK(changed);
  CHECK(code_of([] { harness::parse_augment("hflip,blur"); }) == Errc::InvalidConfig);
}

TEST_CASE("ppm masks") {
  const auto dir = scratch("ppm");
  std::vector<std::int32_t> lab(12);
  for (int i = 0; i < 12; ++i) lab[i] = i % 9;
  const auto path = (dir / "m.ppm").string();
  harness::write_label_ppm(path, lab, 3, 4);
  const std::string bytes = slurp(path);
  CHECK(bytes.rfind("P6\n4 3\n255\n", 0) == 0);
  CHECK(bytes.size() == 11 + 36);
  std::int64_t h = 0, w = 0;
  CHECK(harness::read_label_ppm(path, h, w) == lab);
  CHECK(h == 3);
  CHECK(w == 4);
  std::set<std::array<std::uint8_t, 3>> distinct(harness::palette().begin(), harness::palette().end());
  CHECK(distinct.size() == 9);
  fs::remove_all(dir);
}

TEST_CASE("cli") {
  std::string out, err;
  CHECK(cli({"bogus"}, &out, &err) == 1);
  CHECK(err.find("Usage") != std::string::npos);
  CHECK(cli({}, &out, &err) == 1);

  CHECK(cli({"param-count", ACMSEG_SOURCE_DIR "/tools/configs/desk.cfg"}, &out) == 0);
  CHECK(std::stoll(out) == testutil::closed_form_count({16, 2, 4, 3, 4, 6, true, true}));
  CHECK(cli({"param-count", "/nonexistent.cfg"}, &out, &err) == 2);

  const auto dir = scratch("cli");
  CHECK(cli({"gen-data", "--seed", "4", "--count", "10", "--size", "32", "--classes", "3", "--out",
             (dir / "data").string()}) == 0);
  std::ofstream(dir / "run.cfg") << "model.base_width=4\nmodel.n_vss=1\nmodel.num_classes=3\n"
                                    "model.input_size=32\nmodel.depths=1,1,1\nmodel.d_state=4\n"
                                    "train.epochs=2\ntrain.batch=4\ntrain.seed=3\ntrain.augment=hflip\n"
                                    "data.manifest=data/manifest.tsv\nio.output_dir=out\n";
  auto strip_seconds = [](const std::string& csv) {
    std::istringstream ss(csv);
    std::string line, kept;
    while (std::getline(ss, line)) kept += line.substr(0, line.rfind(',')) + "\n";
    return kept;
  };
  const auto cfg = (dir / "run.cfg").string();
  REQUIRE(cli({"train", cfg}, &out, &err) == 0);
  const std::string first = strip_seconds(slurp(dir / "out/train_log.csv"));
  REQUIRE(cli({"eval", cfg, (dir / "out/last.acmc").string()}, &out) == 0);
  CHECK(out.find("mean_dsc") != std::string::npos);
  const std::string eval1 = slurp(dir / "out/eval_test.csv");
  REQUIRE(cli({"train", cfg}) == 0);
  CHECK(strip_seconds(slurp(dir / "out/train_log.csv")) == first);
  REQUIRE(cli({"eval", cfg, (dir / "out/last.acmc").string()}) == 0);
  CHECK(slurp(dir / "out/eval_test.csv") == eval1);

  const auto ppm = (dir / "pred.ppm").string();
  CHECK(cli({"infer", (dir / "out/last.acmc").string(), (dir / "data/images/00000.tns").string(), ppm}) == 0);
  std::int64_t h = 0, w = 0;
  CHECK(harness::read_label_ppm(ppm, h, w).size() == 32 * 32);

  std::ofstream(dir / "bad.cfg") << "model.num_classes=2\ndata.manifest=data/manifest.tsv\n";
  CHECK(cli({"eval", (dir / "bad.cfg").string(), (dir / "out/last.acmc").string()}, &out, &err) == 1);
  fs::remove_all(dir);
}

TEST_CASE("gradient suite passes") {
  for (const auto& e : harness::run_grad_suite()) {
    INFO(e.name << " " << e.report.worst << " " << e.report.max_rel_error);
    CHECK(e.report.passed);
  }
}
