#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "acmseg/train.hpp"

namespace acm::train {

std::int64_t Mask::count() const {
  return std::count_if(data.begin(), data.end(), [](std::uint8_t v) { return v != 0; });
}

Mask mask_from_labels(std::span<const std::int32_t> labels, std::int64_t h, std::int64_t w,
                      std::int32_t cls) {
  Mask m{h, w, std::vector<std::uint8_t>(static_cast<std::size_t>(h * w))};
  for (std::int64_t i = 0; i < h * w; ++i) m.data[i] = labels[i] == cls ? 1 : 0;
  return m;
}

double dsc_metric(const Mask& pred, const Mask& gt) {
  if (pred.h != gt.h || pred.w != gt.w || pred.data.size() != gt.data.size()) {
    fail(Errc::ShapeMismatch, "dsc_metric masks differ in shape");
  }
  std::int64_t p = 0, g = 0, both = 0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const bool a = pred.data[i] != 0, b = gt.data[i] != 0;
    p += a;
    g += b;
    both += a && b;
  }
  if (p + g == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(p + g);
}

std::vector<std::int64_t> boundary_pixels(const Mask& m) {
  std::vector<std::int64_t> out;
  auto fg = [&](std::int64_t r, std::int64_t c) {
    return r >= 0 && r < m.h && c >= 0 && c < m.w && m.data[r * m.w + c] != 0;
  };
  for (std::int64_t r = 0; r < m.h; ++r)
    for (std::int64_t c = 0; c < m.w; ++c) {
      if (!fg(r, c)) continue;
      if (!fg(r - 1, c) || !fg(r + 1, c) || !fg(r, c - 1) || !fg(r, c + 1)) {
        out.push_back(r * m.w + c);
      }
    }
  return out;
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Lower envelope of parabolas s2 (q - v)^2 + f(v) over the finite sites of f.
void distance_1d(const std::vector<double>& f, std::vector<double>& d, double s2) {
  const auto n = static_cast<std::int64_t>(f.size());
  std::vector<std::int64_t> v(static_cast<std::size_t>(n));
  std::vector<double> z(static_cast<std::size_t>(n + 1));
  std::int64_t k = -1;
  for (std::int64_t q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      continue;
    }
    // z[0] = -inf, so the first parabola is never popped
    double s = 0;
    while (true) {
      const std::int64_t p = v[k];
      s = ((f[q] + s2 * static_cast<double>(q * q)) - (f[p] + s2 * static_cast<double>(p * p))) /
          (2.0 * s2 * static_cast<double>(q - p));
      if (s > z[k]) break;
      --k;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  if (k < 0) {
    std::fill(d.begin(), d.end(), kInf);
    return;
  }
  std::int64_t j = 0;
  for (std::int64_t q = 0; q < n; ++q) {
    while (z[j + 1] < static_cast<double>(q)) ++j;
    const double dq = static_cast<double>(q - v[j]);
    d[q] = s2 * dq * dq + f[v[j]];
  }
}

// Squared distance from every pixel to the nearest site.
std::vector<double> squared_edt(const std::vector<std::int64_t>& sites, std::int64_t h,
                                std::int64_t w, std::array<double, 2> spacing) {
  std::vector<double> g(static_cast<std::size_t>(h * w), kInf);
  for (auto s : sites) g[s] = 0.0;
  const double sy2 = spacing[0] * spacing[0], sx2 = spacing[1] * spacing[1];
  std::vector<double> f(static_cast<std::size_t>(h)), d(static_cast<std::size_t>(h));
  for (std::int64_t c = 0; c < w; ++c) {
    for (std::int64_t r = 0; r < h; ++r) f[r] = g[r * w + c];
    distance_1d(f, d, sy2);
    for (std::int64_t r = 0; r < h; ++r) g[r * w + c] = d[r];
  }
  f.resize(static_cast<std::size_t>(w));
  d.resize(static_cast<std::size_t>(w));
  for (std::int64_t r = 0; r < h; ++r) {
    std::copy(g.begin() + r * w, g.begin() + (r + 1) * w, f.begin());
    distance_1d(f, d, sx2);
    std::copy(d.begin(), d.end(), g.begin() + r * w);
  }
  return g;
}

}  // namespace

std::optional<double> boundary_percentile(const Mask& pred, const Mask& gt,
                                          std::array<double, 2> spacing, double q) {
  if (pred.h != gt.h || pred.w != gt.w) fail(Errc::ShapeMismatch, "hd95 masks differ in shape");
  if (!(q > 0 && q <= 1)) fail(Errc::InvalidConfig, "percentile must lie in (0, 1]");
  const auto a = boundary_pixels(pred), b = boundary_pixels(gt);
  if (a.empty() || b.empty()) return std::nullopt;
  const auto to_b = squared_edt(b, gt.h, gt.w, spacing);
  const auto to_a = squared_edt(a, pred.h, pred.w, spacing);
  std::vector<double> dist;
  dist.reserve(a.size() + b.size());
  for (auto i : a) dist.push_back(std::sqrt(to_b[i]));
  for (auto i : b) dist.push_back(std::sqrt(to_a[i]));
  std::sort(dist.begin(), dist.end());
  const auto n = static_cast<double>(dist.size());
  const auto idx = static_cast<std::size_t>(std::max(1.0, std::ceil(q * n - 1e-9))) - 1;
  return dist[idx];
}

std::optional<double> hd95(const Mask& pred, const Mask& gt, std::array<double, 2> spacing) {
  return boundary_percentile(pred, gt, spacing, 0.95);
}

std::string MetricsReport::to_string() const {
  std::ostringstream os;
  os.precision(6);
  os << "mean_dsc " << mean_dsc << "\nmean_hd95 " << mean_hd95 << "\nhd95_undefined "
     << undefined_hd95 << "/" << cases << "\n";
  for (std::size_t k = 0; k < class_dsc.size(); ++k) {
    os << "class " << k + 1 << " dsc " << class_dsc[k] << " hd95 " << class_hd95[k] << "\n";
  }
  return os.str();
}

MetricsAccumulator::MetricsAccumulator(std::int64_t num_classes, std::array<double, 2> spacing)
    : k_(num_classes),
      spacing_(spacing),
      dsc_sum_(static_cast<std::size_t>(num_classes - 1), 0.0),
      hd_sum_(static_cast<std::size_t>(num_classes - 1), 0.0),
      hd_count_(static_cast<std::size_t>(num_classes - 1), 0) {}

void MetricsAccumulator::add(std::span<const std::int32_t> pred, std::span<const std::int32_t> gt,
                             std::int64_t h, std::int64_t w) {
  for (std::int32_t c = 1; c < k_; ++c) {
    const Mask p = mask_from_labels(pred, h, w, c), g = mask_from_labels(gt, h, w, c);
    dsc_sum_[c - 1] += dsc_metric(p, g);
    if (const auto d = hd95(p, g, spacing_)) {
      hd_sum_[c - 1] += *d;
      ++hd_count_[c - 1];
    }
  }
  ++images_;
}

MetricsReport MetricsAccumulator::report() const {
  MetricsReport r;
  r.num_classes = k_;
  r.cases = images_ * (k_ - 1);
  double dsum = 0, hsum = 0;
  std::int64_t hcount = 0;
  for (std::int64_t c = 0; c < k_ - 1; ++c) {
    const double dm = images_ > 0 ? dsc_sum_[c] / static_cast<double>(images_) : 0.0;
    r.class_dsc.push_back(dm);
    r.class_hd95.push_back(hd_count_[c] > 0 ? hd_sum_[c] / static_cast<double>(hd_count_[c])
                                            : std::nan(""));
    dsum += dm;
    hsum += hd_sum_[c];
    hcount += hd_count_[c];
  }
  r.mean_dsc = k_ > 1 ? dsum / static_cast<double>(k_ - 1) : 0.0;
  r.mean_hd95 = hcount > 0 ? hsum / static_cast<double>(hcount) : std::nan("");
  r.undefined_hd95 = r.cases - hcount;
  return r;
}

std::vector<std::int32_t> predict_labels(const Tensor& logits) {
  if (logits.dim() != 4) fail(Errc::ShapeMismatch, "predict_labels expects [n,K,h,w]");
  const std::int64_t n = logits.shape()[0], k = logits.shape()[1];
  const std::int64_t hw = logits.shape()[2] * logits.shape()[3];
  std::vector<std::int32_t> out(static_cast<std::size_t>(n * hw));
  dispatch(logits.dtype(), [&]<typename T>() {
    const auto v = logits.data<T>();
    for (std::int64_t b = 0; b < n; ++b)
      for (std::int64_t i = 0; i < hw; ++i) {
        std::int32_t best = 0;
        T bv = v[(b * k) * hw + i];
        for (std::int64_t c = 1; c < k; ++c) {
          const T x = v[(b * k + c) * hw + i];
          if (x > bv) {
            bv = x;
            best = static_cast<std::int32_t>(c);
          }
        }
        out[b * hw + i] = best;
      }
  });
  return out;
}

}  // namespace acm::train
