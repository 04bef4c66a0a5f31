#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace vpr {

/// Dense row-major 2-D array. Used for maps on the patch grid, assignment
/// matrices and descriptor tables.
template <typename T>
struct Array2 {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> values;

  Array2() = default;
  Array2(std::size_t r, std::size_t c, T fill = T{}) : rows(r), cols(c), values(r * c, fill) {}

  [[nodiscard]] std::size_t size() const noexcept { return values.size(); }
  [[nodiscard]] bool empty() const noexcept { return values.empty(); }

  T& operator()(std::size_t r, std::size_t c) noexcept { return values[r * cols + c]; }
  const T& operator()(std::size_t r, std::size_t c) const noexcept { return values[r * cols + c]; }

  std::span<T> row(std::size_t r) noexcept { return {values.data() + r * cols, cols}; }
  std::span<const T> row(std::size_t r) const noexcept { return {values.data() + r * cols, cols}; }

  bool operator==(const Array2&) const = default;
};

using Array2f = Array2<float>;
using Array2d = Array2<double>;

template <typename To, typename From>
Array2<To> cast_array(const Array2<From>& in) {
  Array2<To> out(in.rows, in.cols);
  for (std::size_t i = 0; i < in.size(); ++i) out.values[i] = static_cast<To>(in.values[i]);
  return out;
}

}  // namespace vpr
