#include "vpr/resample.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace vpr {

namespace {

struct Tap {
  std::size_t lo;
  std::size_t hi;
  double frac;
};

Tap corner_aligned_tap(std::size_t out_index, std::size_t out_size, std::size_t in_size) {
  if (in_size == 1 || out_size == 1) return {0, 0, 0.0};
  const double pos = static_cast<double>(out_index) * static_cast<double>(in_size - 1) /
                     static_cast<double>(out_size - 1);
  auto lo = static_cast<std::size_t>(std::floor(pos));
  lo = std::min(lo, in_size - 1);
  const std::size_t hi = std::min(lo + 1, in_size - 1);
  return {lo, hi, pos - static_cast<double>(lo)};
}

}  // namespace

template <typename T>
Array2<T> resample_bilinear(const Array2<T>& map, std::size_t out_h, std::size_t out_w) {
  if (map.rows == 0 || map.cols == 0) throw std::invalid_argument("resample_bilinear: empty input");
  if (out_h == 0 || out_w == 0) throw std::invalid_argument("resample_bilinear: zero-sized target");
  if (map.rows == out_h && map.cols == out_w) return map;

  Array2<T> out(out_h, out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const Tap ty = corner_aligned_tap(y, out_h, map.rows);
    for (std::size_t x = 0; x < out_w; ++x) {
      const Tap tx = corner_aligned_tap(x, out_w, map.cols);
      const double v00 = map(ty.lo, tx.lo);
      const double v01 = map(ty.lo, tx.hi);
      const double v10 = map(ty.hi, tx.lo);
      const double v11 = map(ty.hi, tx.hi);
      const double top = v00 + tx.frac * (v01 - v00);
      const double bottom = v10 + tx.frac * (v11 - v10);
      double v = top + ty.frac * (bottom - top);
      // Convex combination; clamp away the last-ulp overshoot.
      const double lo = std::min({v00, v01, v10, v11});
      const double hi = std::max({v00, v01, v10, v11});
      v = std::clamp(v, lo, hi);
      out(y, x) = static_cast<T>(v);
    }
  }
  return out;
}

template Array2<float> resample_bilinear(const Array2<float>&, std::size_t, std::size_t);
template Array2<double> resample_bilinear(const Array2<double>&, std::size_t, std::size_t);

}  // namespace vpr
