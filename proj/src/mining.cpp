#include "vpr/mining.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

#include "vpr/dot.hpp"
#include "vpr/errors.hpp"

namespace vpr {

void MiningParams::validate() const {
  if (n_pairs < 1) throw std::invalid_argument("mining: n_pairs must be >= 1");
  if (!(thr2 > 0.0 && thr2 <= 1.0)) throw std::invalid_argument("mining: thr2 must lie in (0,1]");
  const double lo = thr2 >= 1.0 ? -1.0 : 0.0;
  if (!(thr1 >= lo && thr1 < 1.0)) throw std::invalid_argument("mining: thr1 out of range");
  if (thr2 < 1.0 && !(thr1 > 0.0)) throw std::invalid_argument("mining: thr1 must be positive with the ratio test on");
}

double token_cosine(std::span<const float> a, std::span<const float> b) {
  const double na = std::sqrt(dot_f64(a, a));
  const double nb = std::sqrt(dot_f64(b, b));
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot_f64(a, b) / (na * nb);
}

std::vector<std::size_t> hard_clusters(const AssignmentResult& assignment) {
  std::vector<std::size_t> out(assignment.tokens());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto row = assignment.probs.row(i);
    out[i] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

namespace {

void require_mining_inputs(const ImageRecord& r, const char* role) {
  const std::string who(role);
  if (!r.assignment) throw DataError("assignment", who + " record has no assignment section");
  if (r.tokens.empty()) throw DataError("patch_tokens", who + " record has no patch tokens");
}

}  // namespace

std::vector<PseudoPair> mine_pairs(const ImageRecord& anchor, const ImageRecord& positive, const MiningParams& params) {
  params.validate();
  require_mining_inputs(anchor, "anchor");
  require_mining_inputs(positive, "positive");
  if (anchor.mask.empty()) throw DataError("fused_mask", "anchor record has no fused mask");
  if (anchor.tokens.dim != positive.tokens.dim) throw DataError("patch_tokens", "token dimensions differ");
  if (anchor.assignment->clusters() != positive.assignment->clusters())
    throw DataError("assignment", "cluster counts differ");

  const std::size_t dustbin = anchor.assignment->clusters();
  const std::vector<std::size_t> ca = hard_clusters(*anchor.assignment);
  const std::vector<std::size_t> cp = hard_clusters(*positive.assignment);
  std::vector<std::vector<std::size_t>> members(dustbin);
  for (std::size_t j = 0; j < cp.size(); ++j)
    if (cp[j] != dustbin) members[cp[j]].push_back(j);

  std::vector<std::size_t> order(ca.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto& mv = anchor.mask.values.values;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return mv[a] > mv[b]; });

  const bool ratio_test = params.thr2 < 1.0;
  std::vector<PseudoPair> pairs;
  for (const std::size_t p : order) {
    if (pairs.size() >= params.n_pairs) break;
    const std::size_t c = ca[p];
    if (c == dustbin || members[c].empty()) continue;
    const auto tok = anchor.tokens.token(p);
    std::size_t best = 0;
    double s1 = -std::numeric_limits<double>::infinity();
    double s2 = -std::numeric_limits<double>::infinity();
    for (const std::size_t j : members[c]) {
      const double s = token_cosine(tok, positive.tokens.token(j));
      if (s > s1) {
        s2 = s1;
        s1 = s;
        best = j;
      } else if (s > s2) {
        s2 = s;
      }
    }
    if (members[c].size() == 1) s2 = 0.0;
    const double ratio = s1 != 0.0 ? s2 / s1 : 0.0;
    if (!(s1 > params.thr1)) continue;
    if (ratio_test && !(s1 > 0.0 && ratio < params.thr2)) continue;
    pairs.push_back({p, best, s1, ratio});
  }
  return pairs;
}

namespace {

struct DenseSampler {
  const LocalFeatureSet* local = nullptr;
  std::size_t width_p = 0;
  std::size_t sy = 0;
  std::size_t sx = 0;

  DenseSampler(const ImageRecord& r, const char* role) : local(&r.local), width_p(r.patch_shape.width) {
    const std::string who(role);
    if (!r.local.is_dense() || r.local.empty()) throw DataError("local_descriptors", who + " record has no dense local grid");
    const GridShape ps = r.patch_shape;
    if (ps.count() == 0 || r.local.grid_height % ps.height != 0 || r.local.grid_width % ps.width != 0)
      throw DataError("local_descriptors", who + " dense grid is not a multiple of the patch grid");
    sy = r.local.grid_height / ps.height;
    sx = r.local.grid_width / ps.width;
  }

  std::span<const float> at(std::size_t patch) const {
    const std::size_t r = patch / width_p;
    const std::size_t c = patch % width_p;
    const std::size_t row = r * sy + sy / 2;
    const std::size_t col = c * sx + sx / 2;
    return local->descriptors.row(row * local->grid_width + col);
  }
};

}  // namespace

PairInputs pair_similarity_inputs(const ImageRecord& anchor, const ImageRecord& positive,
                                  const std::vector<PseudoPair>& pairs) {
  PairInputs out;
  if (pairs.empty()) return out;
  const DenseSampler sa(anchor, "anchor");
  const DenseSampler sp(positive, "positive");
  const std::size_t dim = anchor.local.dim();
  if (positive.local.dim() != dim) throw DataError("local_descriptors", "local dimensions differ");
  const bool have_tokens = !anchor.tokens.empty() && !positive.tokens.empty();

  out.anchor = Array2d(pairs.size(), dim);
  out.positive = Array2d(pairs.size(), dim);
  out.backbone_sims.reserve(pairs.size());
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const PseudoPair& pp = pairs[k];
    if (pp.anchor_index >= anchor.patch_shape.count() || pp.positive_index >= positive.patch_shape.count())
      throw std::out_of_range("pair_similarity_inputs: patch index out of range");
    const auto a = sa.at(pp.anchor_index);
    const auto b = sp.at(pp.positive_index);
    std::copy(a.begin(), a.end(), out.anchor.row(k).begin());
    std::copy(b.begin(), b.end(), out.positive.row(k).begin());
    out.backbone_sims.push_back(have_tokens ? token_cosine(anchor.tokens.token(pp.anchor_index),
                                                           positive.tokens.token(pp.positive_index))
                                            : pp.similarity);
  }
  return out;
}

}  // namespace vpr
