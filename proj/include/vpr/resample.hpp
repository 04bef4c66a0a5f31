#pragma once

#include <cstddef>

#include "vpr/array.hpp"

namespace vpr {

/// Bilinear resampling with align-corners semantics: output corners sample
/// input corners exactly. A size-1 output axis samples input coordinate 0.
/// Throws std::invalid_argument for empty input or zero-sized targets.
template <typename T>
Array2<T> resample_bilinear(const Array2<T>& map, std::size_t out_h, std::size_t out_w);

extern template Array2<float> resample_bilinear(const Array2<float>&, std::size_t, std::size_t);
extern template Array2<double> resample_bilinear(const Array2<double>&, std::size_t, std::size_t);

/// Nearest-neighbour block replication by integer factors.
template <typename T>
Array2<T> upsample_blocks(const Array2<T>& map, std::size_t factor_h, std::size_t factor_w) {
  Array2<T> out(map.rows * factor_h, map.cols * factor_w);
  for (std::size_t r = 0; r < out.rows; ++r)
    for (std::size_t c = 0; c < out.cols; ++c) out(r, c) = map(r / factor_h, c / factor_w);
  return out;
}

}  // namespace vpr
