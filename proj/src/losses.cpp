#include "vpr/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "vpr/matching.hpp"

namespace vpr {

namespace {

// Percentile clip of one group of entries (a row, or the whole map) with the
// bookkeeping needed to route gradients back through the quantile.
struct ClipGroup {
  std::vector<std::size_t> members;  // flat indices into the map
  std::size_t lo_index = 0;          // entry holding the lower order statistic
  std::size_t hi_index = 0;          // entry holding the upper order statistic
  double frac = 0.0;
  double threshold = 0.0;
};

std::vector<ClipGroup> clip_groups(const Array2d& map, double q, ClipMode mode) {
  std::vector<std::vector<std::size_t>> groups;
  if (mode == ClipMode::kGlobal) {
    groups.emplace_back(map.size());
    std::iota(groups.back().begin(), groups.back().end(), std::size_t{0});
  } else {
    for (std::size_t r = 0; r < map.rows; ++r) {
      groups.emplace_back(map.cols);
      std::iota(groups.back().begin(), groups.back().end(), r * map.cols);
    }
  }
  std::vector<ClipGroup> out;
  out.reserve(groups.size());
  for (auto& members : groups) {
    std::vector<std::size_t> order = members;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return map.values[a] < map.values[b]; });
    const double h = static_cast<double>(order.size() - 1) * q;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, order.size() - 1);
    ClipGroup g;
    g.members = std::move(members);
    g.lo_index = order[lo];
    g.hi_index = order[hi];
    g.frac = h - static_cast<double>(lo);
    const double vlo = map.values[g.lo_index];
    g.threshold = vlo + g.frac * (map.values[g.hi_index] - vlo);
    out.push_back(std::move(g));
  }
  return out;
}

struct SmoothedMap {
  std::vector<ClipGroup> groups;
  std::vector<double> clipped;
  std::vector<double> p;      // normalized, before the floor
  std::vector<double> p_hat;  // floored
  double sum = 0.0;
};

SmoothedMap smooth(const Array2d& map, double q, ClipMode mode) {
  SmoothedMap s;
  s.groups = clip_groups(map, q, mode);
  s.clipped = map.values;
  for (const auto& g : s.groups)
    for (const std::size_t i : g.members) s.clipped[i] = std::min(map.values[i], g.threshold);
  s.sum = std::accumulate(s.clipped.begin(), s.clipped.end(), 0.0);
  if (!(s.sum > 0.0)) throw std::invalid_argument("loss_sa: map has no positive mass after clipping");
  s.p.resize(s.clipped.size());
  s.p_hat.resize(s.clipped.size());
  for (std::size_t i = 0; i < s.p.size(); ++i) {
    s.p[i] = s.clipped[i] / s.sum;
    s.p_hat[i] = std::max(s.p[i], kProbabilityFloor);
  }
  return s;
}

// Gradient w.r.t. the raw map given the gradient w.r.t. p_hat.
Array2d backprop_smoothing(const Array2d& map, const SmoothedMap& s, const std::vector<double>& grad_p_hat) {
  const std::size_t n = s.p.size();
  std::vector<double> grad_p(n);
  for (std::size_t i = 0; i < n; ++i) grad_p[i] = s.p[i] > kProbabilityFloor ? grad_p_hat[i] : 0.0;
  double dot = 0.0;
  for (std::size_t i = 0; i < n; ++i) dot += grad_p[i] * s.p[i];
  std::vector<double> grad_c(n);
  for (std::size_t i = 0; i < n; ++i) grad_c[i] = (grad_p[i] - dot) / s.sum;

  Array2d grad(map.rows, map.cols, 0.0);
  for (const auto& g : s.groups) {
    double clipped_grad = 0.0;
    for (const std::size_t i : g.members) {
      if (map.values[i] >= g.threshold)
        clipped_grad += grad_c[i];
      else
        grad.values[i] += grad_c[i];
    }
    grad.values[g.lo_index] += clipped_grad * (1.0 - g.frac);
    grad.values[g.hi_index] += clipped_grad * g.frac;
  }
  return grad;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

void require_finite(const Array2d& a, const char* what) {
  for (const double v : a.values)
    if (!std::isfinite(v)) throw std::invalid_argument(std::string(what) + ": non-finite input");
}

// d(loss)/d(mask_i) for a unit pooled descriptor f = s/|s| with s = sum_i w(m_i) F_i,
// where dw/dm = sign (+1 for the salient pool, -1 for the inverted pool).
void accumulate_pool_grad(const Array2d& features, const std::vector<double>& f, double norm,
                          const std::vector<double>& grad_f, double sign, Array2d& grad_mask) {
  const double gf = dot(grad_f, f);
  for (std::size_t i = 0; i < features.rows; ++i) {
    const auto row = features.row(i);
    double g_dot_feat = 0.0;
    double f_dot_feat = 0.0;
    for (std::size_t k = 0; k < features.cols; ++k) {
      g_dot_feat += grad_f[k] * row[k];
      f_dot_feat += f[k] * row[k];
    }
    grad_mask.values[i] += sign * (g_dot_feat - gf * f_dot_feat) / norm;
  }
}

}  // namespace

void LossWeights::validate() const {
  for (const double v : {alpha_sa, beta_pc, ms.alpha, ms.beta, ms.lambda, ms.margin, gamma_margin})
    if (!std::isfinite(v)) throw std::invalid_argument("LossWeights: non-finite value");
  if (alpha_sa < 0.0 || beta_pc < 0.0) throw std::invalid_argument("LossWeights: alpha and beta must be >= 0");
}

SaResult loss_sa(const Array2d& m_a, const Array2d& r, double q, ClipMode mode) {
  if (m_a.rows != r.rows || m_a.cols != r.cols) throw std::invalid_argument("loss_sa: shape mismatch");
  if (m_a.empty()) throw std::invalid_argument("loss_sa: empty maps");
  if (!(q > 0.0 && q < 1.0)) throw std::invalid_argument("loss_sa: q must lie in (0,1)");
  require_finite(m_a, "loss_sa");
  require_finite(r, "loss_sa");

  const SmoothedMap a = smooth(m_a, q, mode);
  const SmoothedMap b = smooth(r, q, mode);
  const std::size_t n = a.p.size();

  SaResult out;
  std::vector<double> grad_a(n);
  std::vector<double> grad_b(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double pa = a.p_hat[i];
    const double pb = b.p_hat[i];
    const double log_ratio = std::log(pa) - std::log(pb);
    out.value += (pa - pb) * log_ratio;
    grad_a[i] = log_ratio + 1.0 - pb / pa;
    grad_b[i] = -log_ratio + 1.0 - pa / pb;
  }
  out.grad_m_a = backprop_smoothing(m_a, a, grad_a);
  out.grad_r = backprop_smoothing(r, b, grad_b);
  return out;
}

RegionDescriptors region_descriptors(const Array2d& features, const Array2d& mask) {
  if (features.rows != mask.size()) throw std::invalid_argument("region_descriptors: mask size differs from feature grid");
  const std::size_t d = features.cols;
  std::vector<double> sal(d, 0.0);
  std::vector<double> irr(d, 0.0);
  for (std::size_t i = 0; i < features.rows; ++i) {
    const double m = mask.values[i];
    if (!(m >= 0.0 && m <= 1.0)) throw std::invalid_argument("region_descriptors: mask outside [0,1]");
    const auto row = features.row(i);
    for (std::size_t k = 0; k < d; ++k) {
      sal[k] += m * row[k];
      irr[k] += (1.0 - m) * row[k];
    }
  }
  RegionDescriptors out;
  out.salient_norm = std::sqrt(dot(sal, sal));
  out.irrelevant_norm = std::sqrt(dot(irr, irr));
  if (!(out.salient_norm > 0.0) || !(out.irrelevant_norm > 0.0)) throw std::domain_error("degenerate region");
  for (double& v : sal) v /= out.salient_norm;
  for (double& v : irr) v /= out.irrelevant_norm;
  out.salient = std::move(sal);
  out.irrelevant = std::move(irr);
  return out;
}

SceResult loss_sce(const std::vector<double>& f_sal, const std::vector<double>& f_pos,
                   const std::vector<double>& f_irr, double margin) {
  if (f_sal.size() != f_pos.size() || f_sal.size() != f_irr.size())
    throw std::invalid_argument("loss_sce: dimension mismatch");
  const std::size_t d = f_sal.size();
  SceResult out;
  out.grad_salient.assign(d, 0.0);
  out.grad_positive.assign(d, 0.0);
  out.grad_irrelevant.assign(d, 0.0);
  const double slack = margin - (dot(f_sal, f_pos) - dot(f_sal, f_irr));
  if (slack <= 0.0) return out;
  out.value = slack;
  for (std::size_t k = 0; k < d; ++k) {
    out.grad_salient[k] = f_irr[k] - f_pos[k];
    out.grad_positive[k] = -f_sal[k];
    out.grad_irrelevant[k] = f_sal[k];
  }
  return out;
}

SceMaskResult loss_sce_masks(const Array2d& features, const Array2d& mask, const Array2d& positive_features,
                             const Array2d& positive_mask, double margin) {
  const RegionDescriptors anchor = region_descriptors(features, mask);
  const RegionDescriptors positive = region_descriptors(positive_features, positive_mask);
  const SceResult sce = loss_sce(anchor.salient, positive.salient, anchor.irrelevant, margin);

  SceMaskResult out;
  out.value = sce.value;
  out.grad_mask = Array2d(mask.rows, mask.cols, 0.0);
  out.grad_positive_mask = Array2d(positive_mask.rows, positive_mask.cols, 0.0);
  if (sce.value <= 0.0) return out;
  accumulate_pool_grad(features, anchor.salient, anchor.salient_norm, sce.grad_salient, +1.0, out.grad_mask);
  accumulate_pool_grad(features, anchor.irrelevant, anchor.irrelevant_norm, sce.grad_irrelevant, -1.0, out.grad_mask);
  accumulate_pool_grad(positive_features, positive.salient, positive.salient_norm, sce.grad_positive, +1.0,
                       out.grad_positive_mask);
  return out;
}

PcResult loss_pc(const Array2d& anchor, const Array2d& positive, const std::vector<double>& backbone_sims) {
  if (anchor.rows != positive.rows || anchor.cols != positive.cols || anchor.rows != backbone_sims.size())
    throw std::invalid_argument("loss_pc: pair arrays differ in shape");
  PcResult out;
  const std::size_t n = anchor.rows;
  out.grad_anchor = Array2d(n, anchor.cols, 0.0);
  out.grad_positive = Array2d(n, anchor.cols, 0.0);
  if (n == 0) return out;

  const double peak = *std::max_element(backbone_sims.begin(), backbone_sims.end());
  std::vector<double> w(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = std::exp(backbone_sims[i] - peak);
    total += w[i];
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto a = anchor.row(i);
    const auto p = positive.row(i);
    double s = 0.0;
    for (std::size_t k = 0; k < anchor.cols; ++k) s += a[k] * p[k];
    const double weight = w[i] / total;
    out.value += weight * (1.0 - s);
    auto ga = out.grad_anchor.row(i);
    auto gp = out.grad_positive.row(i);
    for (std::size_t k = 0; k < anchor.cols; ++k) {
      ga[k] = -weight * p[k];
      gp[k] = -weight * a[k];
    }
  }
  return out;
}

double loss_ms(const Array2d& x, const std::vector<std::int64_t>& labels, const MsParams& params) {
  const std::size_t b = x.rows;
  if (labels.size() != b) throw std::invalid_argument("loss_ms: label count differs from batch size");
  if (b < 2) throw std::invalid_argument("loss_ms: batch needs at least two rows");

  Array2d sim(b, b);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < b; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < x.cols; ++k) s += x(i, k) * x(j, k);
      sim(i, j) = s;
    }

  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    std::vector<double> pos;
    std::vector<double> neg;
    for (std::size_t j = 0; j < b; ++j) {
      if (j == i) continue;
      (labels[j] == labels[i] ? pos : neg).push_back(sim(i, j));
    }
    if (pos.empty() || neg.empty()) continue;
    const double hardest_pos = *std::min_element(pos.begin(), pos.end());
    const double hardest_neg = *std::max_element(neg.begin(), neg.end());

    double pos_sum = 0.0;
    std::size_t pos_kept = 0;
    for (const double s : pos)
      if (s - params.margin < hardest_neg) {
        pos_sum += std::exp(-params.alpha * (s - params.lambda));
        ++pos_kept;
      }
    double neg_sum = 0.0;
    std::size_t neg_kept = 0;
    for (const double s : neg)
      if (s + params.margin > hardest_pos) {
        neg_sum += std::exp(params.beta * (s - params.lambda));
        ++neg_kept;
      }
    if (pos_kept == 0 || neg_kept == 0) continue;
    total += std::log1p(pos_sum) / params.alpha + std::log1p(neg_sum) / params.beta;
  }
  return total / static_cast<double>(b);
}

double loss_mnn(const LocalFeatureSet& query, const LocalFeatureSet& positive, const LocalFeatureSet& negative) {
  const auto mean_similarity = [&](const LocalFeatureSet& other) {
    const auto matches = match_mutual_nn(query, other);
    if (matches.empty()) return 0.0;
    double s = 0.0;
    for (const Match& m : matches) s += descriptor_similarity(query.descriptors.row(m.u), other.descriptors.row(m.v));
    return s / static_cast<double>(matches.size());
  };
  return std::max(0.0, 1.0 - (mean_similarity(positive) - mean_similarity(negative)));
}

double loss_total(const LossComponents& c, const LossWeights& w) {
  return c.ms + c.mnn + c.sce + w.alpha_sa * c.sa + w.beta_pc * c.pc;
}

}  // namespace vpr
