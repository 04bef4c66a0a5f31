#pragma once

// Training-loss kernels: forward values plus analytic input gradients.
// Nothing here trains anything; the kernels exist so masks, mined pairs and
// descriptors produced by the engine can be scored and gradient-checked.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "vpr/region.hpp"
#include "vpr/types.hpp"

namespace vpr {

/// Multi-similarity loss parameters (scale on positives, scale on negatives,
/// similarity threshold, hard-mining margin).
struct MsParams {
  double alpha = 1.0;
  double beta = 50.0;
  double lambda = 0.5;
  double margin = 0.1;
};

struct LossWeights {
  double alpha_sa = 1.0;      // weight on the alignment loss
  double beta_pc = 1.0;       // weight on the pseudo-correspondence loss
  MsParams ms;
  double gamma_margin = 1.0;  // triplet margin of the contrast loss
  void validate() const;
};

inline constexpr double kProbabilityFloor = 1e-8;
inline constexpr double kDefaultClipQuantile = 0.9;

// ---- alignment (symmetric KL between smoothed maps) -------------------------

struct SaResult {
  double value = 0.0;
  Array2d grad_m_a;
  Array2d grad_r;
};

/// Symmetric KL between the percentile-clipped, sum-normalized M_a and R.
/// Gradients are taken w.r.t. the unclipped inputs; clipped entries pass no
/// gradient to themselves, only through the quantile's order statistics.
SaResult loss_sa(const Array2d& m_a, const Array2d& r, double q = kDefaultClipQuantile,
                 ClipMode mode = ClipMode::kRowWise);

// ---- salient / irrelevant region contrast ----------------------------------

struct RegionDescriptors {
  std::vector<double> salient;     // unit L2
  std::vector<double> irrelevant;  // unit L2
  double salient_norm = 0.0;       // norm of the pooled sum before normalization
  double irrelevant_norm = 0.0;
};

/// Mask-weighted pooling of `features` ([h*w x d]) and its inverse-mask
/// counterpart. Throws std::domain_error("degenerate region") when either
/// pooled sum is zero.
RegionDescriptors region_descriptors(const Array2d& features, const Array2d& mask);

struct SceResult {
  double value = 0.0;
  std::vector<double> grad_salient;
  std::vector<double> grad_positive;
  std::vector<double> grad_irrelevant;
};

/// max(0, margin - (f_sal . f_pos - f_sal . f_irr)).
SceResult loss_sce(const std::vector<double>& f_sal, const std::vector<double>& f_pos,
                   const std::vector<double>& f_irr, double margin = 1.0);

struct SceMaskResult {
  double value = 0.0;
  Array2d grad_mask;           // anchor mask
  Array2d grad_positive_mask;  // positive mask
};

/// Contrast loss as a function of the two masks; features are constants.
SceMaskResult loss_sce_masks(const Array2d& features, const Array2d& mask, const Array2d& positive_features,
                             const Array2d& positive_mask, double margin = 1.0);

// ---- pseudo-correspondence --------------------------------------------------

struct PcResult {
  double value = 0.0;
  Array2d grad_anchor;
  Array2d grad_positive;
};

/// sum_i exp(s_i) (1 - a_i . p_i) / sum_i exp(s_i), with s_i the backbone
/// token similarity of pair i. Zero pairs give 0 with empty gradients.
PcResult loss_pc(const Array2d& anchor, const Array2d& positive, const std::vector<double>& backbone_sims);

// ---- metric-learning terms ---------------------------------------------------

/// Multi-similarity loss with hard pair mining over a batch of unit rows.
double loss_ms(const Array2d& descriptors, const std::vector<std::int64_t>& labels, const MsParams& params = {});

/// Hinge on the gap between mean mutual-NN similarity to the positive and to
/// the negative: max(0, 1 - (mean_pos - mean_neg)). An empty match set
/// contributes a mean of 0.
double loss_mnn(const LocalFeatureSet& query, const LocalFeatureSet& positive, const LocalFeatureSet& negative);

struct LossComponents {
  double ms = 0.0;
  double mnn = 0.0;
  double sce = 0.0;
  double sa = 0.0;
  double pc = 0.0;
};

/// ms + mnn + sce + alpha_sa * sa + beta_pc * pc.
double loss_total(const LossComponents& components, const LossWeights& weights);

}  // namespace vpr
