#include "vpr/region.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "vpr/resample.hpp"

namespace vpr {

double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw std::invalid_argument("quantile: empty input");
  const double h = static_cast<double>(sorted.size() - 1) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

Array2d percentile_clip(const Array2d& map, double q, ClipMode mode) {
  if (!(q > 0.0 && q < 1.0)) throw std::invalid_argument("percentile_clip: q must lie in (0,1)");
  if (map.rows == 0 || map.cols == 0) throw std::invalid_argument("percentile_clip: empty map");
  Array2d out = map;
  if (mode == ClipMode::kGlobal) {
    std::vector<double> sorted = map.values;
    std::sort(sorted.begin(), sorted.end());
    const double threshold = quantile_sorted(sorted, q);
    for (double& v : out.values) v = std::min(v, threshold);
    return out;
  }
  std::vector<double> sorted(map.cols);
  for (std::size_t r = 0; r < map.rows; ++r) {
    const auto row = map.row(r);
    std::copy(row.begin(), row.end(), sorted.begin());
    std::sort(sorted.begin(), sorted.end());
    const double threshold = quantile_sorted(sorted, q);
    for (double& v : out.row(r)) v = std::min(v, threshold);
  }
  return out;
}

DiscriminativeMask fuse_mask(const ReliabilityMap& reliability, const Array2d& mask_a, double top_fraction) {
  if (reliability.values.empty() || mask_a.empty()) throw std::invalid_argument("fuse_mask: empty input");
  if (!(top_fraction > 0.0 && top_fraction <= 1.0)) throw std::invalid_argument("fuse_mask: top_fraction outside (0,1]");
  const Array2f r = resample_bilinear(reliability.values, mask_a.rows, mask_a.cols);
  DiscriminativeMask m;
  m.values = Array2f(mask_a.rows, mask_a.cols);
  for (std::size_t i = 0; i < mask_a.size(); ++i)
    m.values.values[i] = static_cast<float>(static_cast<double>(r.values[i]) * mask_a.values[i]);
  m.top_fraction = top_fraction;
  m.bin = top_fraction_binary(m.values, top_fraction);
  return m;
}

DiscriminativeMask binarize_mask(DiscriminativeMask mask, double top_fraction) {
  if (!(top_fraction > 0.0 && top_fraction <= 1.0))
    throw std::invalid_argument("binarize_mask: top_fraction outside (0,1]");
  mask.top_fraction = top_fraction;
  mask.bin = top_fraction_binary(mask.values, top_fraction);
  return mask;
}

LocalFeatureSet select_local(const LocalFeatureSet& dense, const DiscriminativeMask& mask,
                             const ReliabilityMap& reliability, std::size_t cap) {
  const std::size_t ph = mask.bin.rows;
  const std::size_t pw = mask.bin.cols;
  const std::size_t dh = dense.grid_height;
  const std::size_t dw = dense.grid_width;
  if (ph == 0 || pw == 0) throw std::invalid_argument("select_local: empty mask");
  if (!dense.is_dense()) throw std::invalid_argument("select_local: local features are not a dense grid");
  if (dh % ph != 0 || dw % pw != 0 || dh == 0 || dw == 0)
    throw std::invalid_argument("select_local: dense grid is not an integer multiple of the mask grid");
  if (mask.values.rows != ph || mask.values.cols != pw)
    throw std::invalid_argument("select_local: mask values and binary mask differ in shape");
  const std::size_t sy = dh / ph;
  const std::size_t sx = dw / pw;

  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < dh * dw; ++i)
    if (mask.bin((i / dw) / sy, (i % dw) / sx) != 0) kept.push_back(i);

  if (kept.size() > cap) {
    const auto value_of = [&](std::size_t i) { return mask.values((i / dw) / sy, (i % dw) / sx); };
    std::nth_element(kept.begin(), kept.begin() + static_cast<std::ptrdiff_t>(cap), kept.end(),
                     [&](std::size_t a, std::size_t b) {
                       const float va = value_of(a);
                       const float vb = value_of(b);
                       return va != vb ? va > vb : a < b;
                     });
    kept.resize(cap);
    std::sort(kept.begin(), kept.end());
  }

  Array2f rel_dense;
  if (!reliability.values.empty()) rel_dense = resample_bilinear(reliability.values, dh, dw);

  const std::size_t dim = dense.dim();
  LocalFeatureSet out;
  out.grid_height = dh;
  out.grid_width = dw;
  out.positions.reserve(kept.size());
  out.descriptors = Array2f(kept.size(), dim);
  out.reliability.reserve(kept.size());
  for (std::size_t k = 0; k < kept.size(); ++k) {
    const std::size_t i = kept[k];
    out.positions.push_back(dense.positions[i]);
    const auto src = dense.descriptors.row(i);
    double norm = 0.0;
    for (const float v : src) norm += static_cast<double>(v) * v;
    norm = std::sqrt(norm);
    if (!(norm > 0.0)) throw std::invalid_argument("select_local: zero local descriptor");
    auto dst = out.descriptors.row(k);
    for (std::size_t d = 0; d < dim; ++d) dst[d] = static_cast<float>(src[d] / norm);
    out.reliability.push_back(rel_dense.empty() ? 1.0f : rel_dense.values[i]);
  }
  return out;
}

}  // namespace vpr
