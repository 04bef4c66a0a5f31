#pragma once

#include <cstddef>
#include <span>

#include "vpr/types.hpp"

namespace vpr {

enum class ClipMode {
  kRowWise,  // quantile per row
  kGlobal,   // one quantile over the whole map
};

/// Type-7 quantile (linear interpolation between closest order statistics)
/// of already sorted values.
double quantile_sorted(std::span<const double> sorted, double q);

/// Replace each entry by min(entry, q-quantile of its row) (or of the whole
/// map in global mode). Throws std::invalid_argument for q outside (0,1).
Array2d percentile_clip(const Array2d& map, double q, ClipMode mode = ClipMode::kRowWise);

/// M = resample(R -> patch grid) * M_a, binarized at `top_fraction`.
DiscriminativeMask fuse_mask(const ReliabilityMap& reliability, const Array2d& mask_a,
                             double top_fraction = kDefaultTopFraction);

/// Recompute the binary selection of `mask` at a new top fraction.
DiscriminativeMask binarize_mask(DiscriminativeMask mask, double top_fraction);

/// Keep the dense local features whose patch cell is selected in mask.bin.
/// The dense grid must be an integer multiple of the patch grid. Reliabilities
/// are sampled from R bilinearly resampled to the dense grid. When more than
/// `cap` cells survive, the ones with the highest fused-mask values are kept
/// (ties by dense row-major index); output stays in row-major order.
LocalFeatureSet select_local(const LocalFeatureSet& dense, const DiscriminativeMask& mask,
                             const ReliabilityMap& reliability, std::size_t cap = kDefaultLocalCap);

}  // namespace vpr
