#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "vpr/types.hpp"

namespace vpr {

struct PseudoPair {
  std::size_t anchor_index = 0;    // flat patch index in the anchor
  std::size_t positive_index = 0;  // flat patch index in the positive
  double similarity = 0.0;         // cosine to the best candidate
  double ratio = 0.0;              // second-best / best
  bool operator==(const PseudoPair&) const = default;
};

/// thr1 bounds the best similarity from below (strict), thr2 bounds the
/// second/best ratio from above (strict). thr2 = 1 switches the ratio test
/// off; thr1 may then go down to -1, which turns mining into plain
/// cluster-constrained nearest neighbour.
struct MiningParams {
  double thr1 = 0.8;
  double thr2 = 0.5;
  std::size_t n_pairs = 12;
  void validate() const;
};

/// Hard cluster of every token: argmax over the M salient columns and the
/// dustbin (ties to the lower index). Dustbin-assigned tokens get M.
std::vector<std::size_t> hard_clusters(const AssignmentResult& assignment);

/// Mine pseudo-correspondences from anchor to positive. Anchor patches are
/// visited by descending fused-mask value (ties row-major). Each patch is
/// compared with the positive patches of its own hard cluster by cosine on
/// the raw tokens; a unique candidate has second-best similarity 0. Stops
/// after n_pairs pairs or when the anchor patches run out.
std::vector<PseudoPair> mine_pairs(const ImageRecord& anchor, const ImageRecord& positive,
                                   const MiningParams& params = {});

struct PairInputs {
  Array2d anchor;                     // [pairs x local dim]
  Array2d positive;                   // [pairs x local dim]
  std::vector<double> backbone_sims;  // token cosine per pair
};

/// Dense local descriptors at the block centres of the paired patches:
/// patch (r, c) maps to dense (r*s + s/2, c*s + s/2) with s the per-axis
/// scale between the dense grid and the patch grid.
PairInputs pair_similarity_inputs(const ImageRecord& anchor, const ImageRecord& positive,
                                  const std::vector<PseudoPair>& pairs);

/// Cosine of two token vectors; 0 when either is zero.
double token_cosine(std::span<const float> a, std::span<const float> b);

}  // namespace vpr
