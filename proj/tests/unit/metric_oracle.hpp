#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

// All-pairs reference for the boundary percentile distance.
namespace testutil {

inline bool is_boundary(const std::vector<std::uint8_t>& m, int h, int w, int r, int c) {
  if (!m[r * w + c]) return false;
  const int dr[4] = {-1, 1, 0, 0}, dc[4] = {0, 0, -1, 1};
  for (int k = 0; k < 4; ++k) {
    const int rr = r + dr[k], cc = c + dc[k];
    if (rr < 0 || rr >= h || cc < 0 || cc >= w || !m[rr * w + cc]) return true;
  }
  return false;
}

inline std::optional<double> brute_percentile(const std::vector<std::uint8_t>& a,
                                              const std::vector<std::uint8_t>& b, int h, int w,
                                              double sy, double sx, int pct) {
  std::vector<std::pair<int, int>> pa, pb;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      if (is_boundary(a, h, w, r, c)) pa.push_back({r, c});
      if (is_boundary(b, h, w, r, c)) pb.push_back({r, c});
    }
  if (pa.empty() || pb.empty()) return std::nullopt;
  std::vector<double> d;
  auto directed = [&](const auto& from, const auto& to) {
    for (auto [r, c] : from) {
      double best = INFINITY;
      for (auto [r2, c2] : to) {
        const double dy = (r - r2) * sy, dx = (c - c2) * sx;
        best = std::min(best, dy * dy + dx * dx);
      }
      d.push_back(std::sqrt(best));
    }
  };
  directed(pa, pb);
  directed(pb, pa);
  std::sort(d.begin(), d.end());
  const std::size_t n = d.size();
  const std::size_t idx = (static_cast<std::size_t>(pct) * n + 99) / 100 - 1;
  return d[idx];
}

}  // namespace testutil
