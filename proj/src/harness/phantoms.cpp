#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "acmseg/harness.hpp"

namespace acm::harness {

namespace fs = std::filesystem;

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double band_centre(std::int32_t cls, std::int64_t k) {
  return 0.4 + 0.55 * static_cast<double>(cls - 1) / static_cast<double>(std::max<std::int64_t>(1, k - 2));
}

bool try_place(Rng& rng, std::int64_t s, std::int64_t k, std::vector<Ellipse>& out,
               std::vector<std::int32_t>& lab) {
  const double rmax = std::min(0.2 * s, 0.45 * s / std::sqrt(static_cast<double>(k - 1)));
  const double rmin = std::max(2.5, 0.4 * rmax);
  for (std::int32_t cls = 1; cls < k; ++cls) {
    bool placed = false;
    for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
      Ellipse e;
      e.cls = cls;
      e.ry = rng.uniform(rmin, rmax);
      e.rx = rng.uniform(rmin, rmax);
      e.theta = rng.uniform(0.0, std::numbers::pi);
      const double reach = std::max(e.ry, e.rx) + 2.0;
      if (2 * reach >= static_cast<double>(s)) continue;
      e.cy = rng.uniform(reach, static_cast<double>(s - 1) - reach);
      e.cx = rng.uniform(reach, static_cast<double>(s - 1) - reach);
      Ellipse grown = e;
      grown.ry += 2.0;
      grown.rx += 2.0;
      bool clear = true;
      for (std::int64_t r = 0; r < s && clear; ++r)
        for (std::int64_t c = 0; c < s; ++c)
          if (lab[r * s + c] != 0 && grown.contains(static_cast<double>(r), static_cast<double>(c))) {
            clear = false;
            break;
          }
      if (!clear) continue;
      for (std::int64_t r = 0; r < s; ++r)
        for (std::int64_t c = 0; c < s; ++c)
          if (e.contains(static_cast<double>(r), static_cast<double>(c))) lab[r * s + c] = cls;
      out.push_back(e);
      placed = true;
    }
    if (!placed) return false;
  }
  return true;
}

}  // namespace

bool Ellipse::contains(double y, double x) const {
  const double dy = y - cy, dx = x - cx;
  const double ct = std::cos(theta), st = std::sin(theta);
  const double u = (dy * ct + dx * st) / ry;
  const double v = (-dy * st + dx * ct) / rx;
  return u * u + v * v <= 1.0;
}

Phantom make_phantom(Rng& rng, std::int64_t s, std::int64_t k) {
  if (s < 16 || s % 16 != 0) fail(Errc::InvalidConfig, "phantom size must be a positive multiple of 16");
  if (k < 2 || k > 9) fail(Errc::InvalidConfig, "phantom classes must be in [2, 9]");
  std::vector<std::int32_t> lab;
  std::vector<Ellipse> ellipses;
  bool ok = false;
  for (int restart = 0; restart < 100 && !ok; ++restart) {
    lab.assign(static_cast<std::size_t>(s * s), 0);
    ellipses.clear();
    ok = try_place(rng, s, k, ellipses, lab);
  }
  if (!ok) fail(Errc::InvalidConfig, "cannot fit " + std::to_string(k - 1) + " ellipses in " + std::to_string(s) + "px");

  std::vector<double> base(static_cast<std::size_t>(k), 0.2);
  for (const auto& e : ellipses) base[e.cls] = band_centre(e.cls, k) + rng.uniform(-0.03, 0.03);
  std::vector<double> img(static_cast<std::size_t>(3 * s * s));
  for (std::int64_t ch = 0; ch < 3; ++ch)
    for (std::int64_t i = 0; i < s * s; ++i)
      img[ch * s * s + i] = std::clamp(rng.normal(base[lab[i]], 0.05), 0.0, 1.0);
  std::vector<double> m(lab.begin(), lab.end());
  Phantom p;
  p.image = Tensor::from_doubles({3, s, s}, img, DType::f32);
  p.mask = Tensor::from_doubles({s, s}, m, DType::f32);
  p.ellipses = std::move(ellipses);
  return p;
}

Phantom make_phantom(std::uint64_t seed, std::int64_t index, std::int64_t size, std::int64_t k) {
  Rng rng(splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(index) + 1)));
  return make_phantom(rng, size, k);
}

train::Dataset phantom_dataset(std::uint64_t seed, std::int64_t first, std::int64_t count,
                               std::int64_t size, std::int64_t k) {
  train::Dataset d;
  for (std::int64_t i = first; i < first + count; ++i) {
    Phantom p = make_phantom(seed, i, size, k);
    d.images.push_back(std::move(p.image));
    d.masks.push_back(std::move(p.mask));
  }
  return d;
}

Split split_of(std::int64_t index, std::int64_t count) {
  if (index < count * 7 / 10) return Split::train;
  if (index < count * 8 / 10) return Split::val;
  return Split::test;
}

Manifest gen_phantoms(std::uint64_t seed, std::int64_t count, std::int64_t size, std::int64_t k,
                      const std::string& out_dir) {
  if (count < 1) fail(Errc::InvalidConfig, "count must be positive");
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "images", ec);
  fs::create_directories(fs::path(out_dir) / "masks", ec);
  if (ec) fail(Errc::Io, "cannot create " + out_dir + ": " + ec.message());

  Manifest m;
  m.root = out_dir;
  std::ofstream side(fs::path(out_dir) / "ellipses.tsv");
  if (!side) fail(Errc::Io, "cannot write ellipses.tsv in " + out_dir);
  side << "index\tclass\tcy\tcx\try\trx\ttheta\n";
  char name[32];
  for (std::int64_t i = 0; i < count; ++i) {
    const Phantom p = make_phantom(seed, i, size, k);
    std::snprintf(name, sizeof name, "%05lld.tns", static_cast<long long>(i));
    ManifestEntry e{std::string("images/") + name, std::string("masks/") + name, split_of(i, count)};
    write_tensor(m.resolve(e.image), p.image);
    write_tensor(m.resolve(e.mask), p.mask);
    m.entries.push_back(std::move(e));
    char row[256];
    for (const auto& el : p.ellipses) {
      std::snprintf(row, sizeof row, "%lld\t%d\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g\n",
                    static_cast<long long>(i), el.cls, el.cy, el.cx, el.ry, el.rx, el.theta);
      side << row;
    }
  }
  if (!side) fail(Errc::Io, "write failed: ellipses.tsv");
  write_manifest((fs::path(out_dir) / "manifest.tsv").string(), m);
  return m;
}

}  // namespace acm::harness
