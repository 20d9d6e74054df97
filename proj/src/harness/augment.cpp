#include <algorithm>
#include <fstream>
#include <sstream>

#include "acmseg/harness.hpp"

namespace acm::harness {

namespace {

// Applies dst[b, i, j] = src[b, map(i, j)] over the trailing two axes.
template <class F>
Tensor remap(const Tensor& x, std::int64_t oh, std::int64_t ow, F&& src_index) {
  if (x.dim() < 2) fail(Errc::ShapeMismatch, "spatial transform needs rank >= 2");
  Shape out_shape = x.shape();
  out_shape[out_shape.size() - 2] = oh;
  out_shape[out_shape.size() - 1] = ow;
  const std::int64_t plane = oh * ow, lead = x.numel() / plane;
  return dispatch(x.dtype(), [&]<typename T>() {
    auto src = x.data<T>();
    std::vector<T> dst(src.size());
    for (std::int64_t b = 0; b < lead; ++b)
      for (std::int64_t i = 0; i < oh; ++i)
        for (std::int64_t j = 0; j < ow; ++j) dst[b * plane + i * ow + j] = src[b * plane + src_index(i, j)];
    return Tensor::from<T>(out_shape, std::move(dst));
  });
}

}  // namespace

AugmentFlags parse_augment(const std::string& list) {
  AugmentFlags f;
  if (list.empty() || list == "none") return f;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item == "hflip") f.hflip = true;
    else if (item == "vflip") f.vflip = true;
    else if (item == "rot90") f.rot90 = true;
    else if (item == "noise") f.noise = true;
    else fail(Errc::InvalidConfig, "unknown augmentation '" + item + "'");
  }
  return f;
}

Tensor hflip(const Tensor& x) {
  const std::int64_t h = x.size(-2), w = x.size(-1);
  return remap(x, h, w, [w](std::int64_t i, std::int64_t j) { return i * w + (w - 1 - j); });
}

Tensor vflip(const Tensor& x) {
  const std::int64_t h = x.size(-2), w = x.size(-1);
  return remap(x, h, w, [h, w](std::int64_t i, std::int64_t j) { return (h - 1 - i) * w + j; });
}

Tensor rot90(const Tensor& x, int k) {
  k = ((k % 4) + 4) % 4;
  Tensor y = x;
  for (int t = 0; t < k; ++t) {
    const std::int64_t h = y.size(-2), w = y.size(-1);
    // out[i, j] = in[j, w-1-i], out is [w, h]
    y = remap(y, w, h, [w](std::int64_t i, std::int64_t j) { return j * w + (w - 1 - i); });
  }
  return y;
}

void augment(Tensor& image, Tensor& mask, Rng& rng, const AugmentFlags& flags) {
  if (flags.hflip && rng.coin()) {
    image = hflip(image);
    mask = hflip(mask);
  }
  if (flags.vflip && rng.coin()) {
    image = vflip(image);
    mask = vflip(mask);
  }
  if (flags.rot90 && rng.coin()) {
    const int k = rng.uniform_int(1, 3);
    image = rot90(image, k);
    mask = rot90(mask, k);
  }
  if (flags.noise && rng.coin()) {
    image = dispatch(image.dtype(), [&]<typename T>() {
      auto src = image.data<T>();
      std::vector<T> dst(src.size());
      for (std::size_t i = 0; i < src.size(); ++i) {
        dst[i] = static_cast<T>(std::clamp(src[i] + rng.normal(0.0, flags.noise_sigma), 0.0, 1.0));
      }
      return Tensor::from<T>(image.shape(), std::move(dst));
    });
  }
}

const std::array<std::array<std::uint8_t, 3>, 9>& palette() {
  static const std::array<std::array<std::uint8_t, 3>, 9> p{{
      {0, 0, 0},
      {230, 25, 75},
      {60, 180, 75},
      {0, 130, 200},
      {255, 225, 25},
      {145, 30, 180},
      {70, 240, 240},
      {245, 130, 48},
      {255, 255, 255},
  }};
  return p;
}

void write_label_ppm(const std::string& path, const std::vector<std::int32_t>& labels,
                     std::int64_t h, std::int64_t w) {
  if (static_cast<std::int64_t>(labels.size()) != h * w) fail(Errc::ShapeMismatch, "label count != h*w");
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(Errc::Io, "cannot open " + path + " for writing");
  f << "P6\n" << w << ' ' << h << "\n255\n";
  for (auto l : labels) {
    if (l < 0 || l >= 9) fail(Errc::LabelOutOfRange, "label " + std::to_string(l) + " has no palette colour");
    f.write(reinterpret_cast<const char*>(palette()[l].data()), 3);
  }
  if (!f) fail(Errc::Io, "write failed: " + path);
}

std::vector<std::int32_t> read_label_ppm(const std::string& path, std::int64_t& h, std::int64_t& w) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(Errc::Io, "cannot open " + path);
  std::string magic;
  int maxval = 0;
  f >> magic >> w >> h >> maxval;
  if (magic != "P6" || maxval != 255 || h <= 0 || w <= 0) fail(Errc::BadMagic, path + ": not an 8-bit P6 file");
  f.get();
  std::vector<std::int32_t> labels(static_cast<std::size_t>(h * w));
  std::array<std::uint8_t, 3> px{};
  for (auto& l : labels) {
    if (!f.read(reinterpret_cast<char*>(px.data()), 3)) fail(Errc::LengthMismatch, path + ": truncated");
    const auto it = std::find(palette().begin(), palette().end(), px);
    if (it == palette().end()) fail(Errc::Io, path + ": colour outside the palette");
    l = static_cast<std::int32_t>(it - palette().begin());
  }
  return labels;
}

}  // namespace acm::harness
