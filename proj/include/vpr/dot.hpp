#pragma once

#include <cstddef>
#include <span>

namespace vpr {

/// Double-precision dot product of f32 vectors. Products are exact in double;
/// they are summed into eight partial sums by index mod 8, which are then
/// combined pairwise. Deterministic and independent of the CPU.
inline double dot_f64(std::span<const float> a, std::span<const float> b) noexcept {
  double acc[8] = {};
  const std::size_t n = a.size();
  std::size_t k = 0;
  for (; k + 8 <= n; k += 8)
    for (std::size_t l = 0; l < 8; ++l) acc[l] += static_cast<double>(a[k + l]) * static_cast<double>(b[k + l]);
  for (std::size_t l = 0; k < n; ++k, ++l) acc[l] += static_cast<double>(a[k]) * static_cast<double>(b[k]);
  return ((acc[0] + acc[4]) + (acc[2] + acc[6])) + ((acc[1] + acc[5]) + (acc[3] + acc[7]));
}

}  // namespace vpr
