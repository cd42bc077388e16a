#pragma once

// Dice overlap and symmetric average surface distance on binary masks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "pint/data.hpp"
#include "pint/errors.hpp"

namespace pint {

struct BinaryMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> fg;  // 0/1, row-major

  BinaryMask() = default;
  BinaryMask(std::size_t h, std::size_t w) : height(h), width(w), fg(h * w, 0) {}

  // Foreground = class id `cls` (or any nonzero id when cls is negative).
  static BinaryMask from_labels(const LabelMap& m, int cls = -1) {
    BinaryMask b(m.height, m.width);
    for (std::size_t j = 0; j < m.ids.size(); ++j)
      b.fg[j] = cls < 0 ? (m.ids[j] != 0) : (m.ids[j] == cls);
    return b;
  }

  bool at(std::size_t y, std::size_t x) const { return fg[y * width + x] != 0; }
  std::size_t count() const { return static_cast<std::size_t>(std::count(fg.begin(), fg.end(), 1)); }
  bool empty() const { return count() == 0; }
  bool operator==(const BinaryMask&) const = default;
};

namespace detail {

inline void require_same(const BinaryMask& a, const BinaryMask& b, const char* what) {
  if (a.height != b.height || a.width != b.width)
    throw ShapeError(std::string(what) + ": mask shapes differ (" + std::to_string(a.height) + "x" +
                     std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                     std::to_string(b.width) + ")");
}

// 1-D squared Euclidean distance transform (lower envelope of parabolas).
inline void edt_1d(const double* f, double* d, std::size_t n, std::vector<std::size_t>& v,
                   std::vector<double>& z) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::size_t k = 0;
  std::size_t first = n;
  for (std::size_t q = 0; q < n; ++q)
    if (f[q] < inf) {
      first = q;
      break;
    }
  if (first == n) {
    std::fill(d, d + n, inf);
    return;
  }
  v[0] = first;
  z[0] = -inf;
  z[1] = inf;
  for (std::size_t q = first + 1; q < n; ++q) {
    if (!(f[q] < inf)) continue;
    const double qd = static_cast<double>(q);
    double s;
    while (true) {
      const double vk = static_cast<double>(v[k]);
      s = ((f[q] + qd * qd) - (f[v[k]] + vk * vk)) / (2.0 * qd - 2.0 * vk);
      if (s > z[k]) break;
      --k;  // z[0] is -inf, so k never underflows
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = inf;
  }
  k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    const double qd = static_cast<double>(q);
    while (z[k + 1] < qd) ++k;
    const double diff = qd - static_cast<double>(v[k]);
    d[q] = diff * diff + f[v[k]];
  }
}

// Exact squared distance from every pixel to the nearest set pixel.
inline std::vector<double> squared_distance_to(const BinaryMask& sites) {
  const std::size_t H = sites.height, W = sites.width;
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> grid(H * W);
  for (std::size_t j = 0; j < H * W; ++j) grid[j] = sites.fg[j] ? 0.0 : inf;
  const std::size_t n = std::max(H, W);
  std::vector<double> f(n), d(n), z(n + 1);
  std::vector<std::size_t> v(n);
  for (std::size_t x = 0; x < W; ++x) {
    for (std::size_t y = 0; y < H; ++y) f[y] = grid[y * W + x];
    edt_1d(f.data(), d.data(), H, v, z);
    for (std::size_t y = 0; y < H; ++y) grid[y * W + x] = d[y];
  }
  for (std::size_t y = 0; y < H; ++y) {
    std::copy_n(grid.data() + y * W, W, f.data());
    edt_1d(f.data(), d.data(), W, v, z);
    std::copy_n(d.data(), W, grid.data() + y * W);
  }
  return grid;
}

}  // namespace detail

// Foreground pixels with at least one 4-neighbour that is background or
// outside the image.
inline BinaryMask boundary(const BinaryMask& m) {
  BinaryMask b(m.height, m.width);
  for (std::size_t y = 0; y < m.height; ++y)
    for (std::size_t x = 0; x < m.width; ++x) {
      if (!m.at(y, x)) continue;
      const bool edge = y == 0 || x == 0 || y + 1 == m.height || x + 1 == m.width || !m.at(y - 1, x) ||
                        !m.at(y + 1, x) || !m.at(y, x - 1) || !m.at(y, x + 1);
      b.fg[y * m.width + x] = edge ? 1 : 0;
    }
  return b;
}

// 2|P∩G| / (|P|+|G|); 1 when both masks are empty.
inline double dice(const BinaryMask& pred, const BinaryMask& gt) {
  detail::require_same(pred, gt, "dice");
  std::size_t inter = 0, p = 0, g = 0;
  for (std::size_t j = 0; j < pred.fg.size(); ++j) {
    p += pred.fg[j];
    g += gt.fg[j];
    inter += pred.fg[j] & gt.fg[j];
  }
  if (p + g == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(p + g);
}

// Symmetric average surface distance in pixels. Throws UndefinedMetricError
// when either mask is empty.
inline double asd(const BinaryMask& pred, const BinaryMask& gt) {
  detail::require_same(pred, gt, "asd");
  if (pred.empty() || gt.empty()) throw UndefinedMetricError("asd: undefined for an empty mask");
  const BinaryMask bp = boundary(pred), bg = boundary(gt);
  const auto dist_to_g = detail::squared_distance_to(bg);
  const auto dist_to_p = detail::squared_distance_to(bp);
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t j = 0; j < bp.fg.size(); ++j) {
    if (bp.fg[j]) {
      total += std::sqrt(dist_to_g[j]);
      ++n;
    }
    if (bg.fg[j]) {
      total += std::sqrt(dist_to_p[j]);
      ++n;
    }
  }
  return total / static_cast<double>(n);
}

// Value substituted for an undefined ASD: the image diagonal.
inline double asd_sentinel(std::size_t height, std::size_t width) {
  return std::hypot(static_cast<double>(height), static_cast<double>(width));
}

}  // namespace pint
