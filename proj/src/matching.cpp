#include "vpr/matching.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#if defined(__x86_64__)
#include <immintrin.h>
#define VPR_SWEEP_AVX512 1
#endif

namespace vpr {
namespace {

constexpr std::uint32_t kNone = std::numeric_limits<std::uint32_t>::max();
constexpr std::size_t kChunk = 16;

double max_row_norm(const Array2f& a) {
  double best = 0.0;
  for (std::size_t r = 0; r < a.rows; ++r) {
    const auto row = a.row(r);
    best = std::max(best, std::sqrt(descriptor_similarity(row, row)));
  }
  return best;
}

// fp32 panels through Eigen. Each entry is a length-d dot product of exactly
// representable inputs, so its error is at most gamma_d * sum|q_k c_k|.
class Fp32Panels final : public detail::SimilarityPanels {
 public:
  Fp32Panels(const Array2f& q, const Array2f& c) : q_(q), c_(c) {
    const double d = static_cast<double>(q.cols);
    const double u = std::ldexp(1.0, -24);
    const double gamma = d * u / (1.0 - d * u);
    bound_ = 1.01 * gamma * max_row_norm(q) * max_row_norm(c) + 1e-30;
  }
  std::size_t panel_rows() const override { return 256; }
  std::size_t panel_stride() const override { return c_.rows; }
  double error_bound() const override { return bound_; }
  void compute(std::size_t first, std::size_t count, float* out) override {
    using RowMajor = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const Eigen::Map<const RowMajor> q(q_.values.data() + first * q_.cols, static_cast<Eigen::Index>(count),
                                       static_cast<Eigen::Index>(q_.cols));
    const Eigen::Map<const RowMajor> c(c_.values.data(), static_cast<Eigen::Index>(c_.rows),
                                       static_cast<Eigen::Index>(c_.cols));
    Eigen::Map<RowMajor> o(out, static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(c_.rows));
    o.noalias() = q * c.transpose();
  }

 private:
  const Array2f& q_;
  const Array2f& c_;
  double bound_ = 0.0;
};

// Row sweep primitives: the maximum of a row, and the indices j where
// a[j] >= row_thr or a[j] >= col_thr[j]. col_thr is readable up to
// round_up(n, 16).
float row_max_scalar(const float* a, std::size_t n) {
  float m = -std::numeric_limits<float>::infinity();
  for (std::size_t j = 0; j < n; ++j) m = std::max(m, a[j]);
  return m;
}

std::size_t row_hits_scalar(const float* a, const float* col_thr, float row_thr, std::size_t n,
                            std::uint32_t* out) {
  std::size_t h = 0;
  for (std::size_t j = 0; j < n; ++j)
    if (a[j] >= row_thr || a[j] >= col_thr[j]) out[h++] = static_cast<std::uint32_t>(j);
  return h;
}

#ifdef VPR_SWEEP_AVX512
__attribute__((target("avx512f"))) float row_max_avx512(const float* a, std::size_t n) {
  __m512 m = _mm512_set1_ps(-std::numeric_limits<float>::infinity());
  std::size_t j = 0;
  for (; j + kChunk <= n; j += kChunk) m = _mm512_max_ps(m, _mm512_loadu_ps(a + j));
  if (j < n) m = _mm512_mask_max_ps(m, static_cast<__mmask16>((1u << (n - j)) - 1u), m, _mm512_maskz_loadu_ps(static_cast<__mmask16>((1u << (n - j)) - 1u), a + j));
  return _mm512_reduce_max_ps(m);
}

__attribute__((target("avx512f"))) std::size_t row_hits_avx512(const float* a, const float* col_thr, float row_thr,
                                                                 std::size_t n, std::uint32_t* out) {
  const __m512 rt = _mm512_set1_ps(row_thr);
  std::size_t h = 0;
  for (std::size_t j = 0; j < n; j += kChunk) {
    const __mmask16 valid = n - j >= kChunk ? static_cast<__mmask16>(0xffff) : static_cast<__mmask16>((1u << (n - j)) - 1u);
    const __m512 v = _mm512_maskz_loadu_ps(valid, a + j);
    __mmask16 hit = _mm512_mask_cmp_ps_mask(valid, v, rt, _CMP_GE_OQ);
    hit |= _mm512_mask_cmp_ps_mask(valid, v, _mm512_loadu_ps(col_thr + j), _CMP_GE_OQ);
    while (hit != 0) {
      out[h++] = static_cast<std::uint32_t>(j + static_cast<std::size_t>(__builtin_ctz(hit)));
      hit = static_cast<__mmask16>(hit & (hit - 1));
    }
  }
  return h;
}

const bool kHaveAvx512 = __builtin_cpu_supports("avx512f");
#endif

float row_max(const float* a, std::size_t n) {
#ifdef VPR_SWEEP_AVX512
  if (kHaveAvx512) return row_max_avx512(a, n);
#endif
  return row_max_scalar(a, n);
}

std::size_t row_hits(const float* a, const float* col_thr, float row_thr, std::size_t n, std::uint32_t* out) {
#ifdef VPR_SWEEP_AVX512
  if (kHaveAvx512) return row_hits_avx512(a, col_thr, row_thr, n, out);
#endif
  return row_hits_scalar(a, col_thr, row_thr, n, out);
}

struct ColumnCandidate {
  std::uint32_t row;
  float approx;
};

std::uint32_t exact_best(const Array2f& from, std::size_t index, const Array2f& to,
                         const std::vector<std::uint32_t>& candidates) {
  std::uint32_t best = kNone;
  double best_score = -std::numeric_limits<double>::infinity();
  const auto a = from.row(index);
  for (const std::uint32_t j : candidates) {
    const double s = descriptor_similarity(a, to.row(j));
    if (s > best_score || (s == best_score && j < best)) {
      best_score = s;
      best = j;
    }
  }
  return best;
}

std::vector<Match> reference_mnn(const Array2f& q, const Array2f& c) {
  std::vector<std::uint32_t> nn_q(q.rows, kNone);
  std::vector<std::uint32_t> nn_c(c.rows, kNone);
  std::vector<double> best_c(c.rows, -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < q.rows; ++i) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c.rows; ++j) {
      const double s = descriptor_similarity(q.row(i), c.row(j));
      if (s > best) {
        best = s;
        nn_q[i] = static_cast<std::uint32_t>(j);
      }
      if (s > best_c[j]) {
        best_c[j] = s;
        nn_c[j] = static_cast<std::uint32_t>(i);
      }
    }
  }
  std::vector<Match> out;
  for (std::size_t i = 0; i < q.rows; ++i)
    if (nn_c[nn_q[i]] == i) out.push_back({static_cast<std::uint32_t>(i), nn_q[i]});
  return out;
}

// Sweep the approximate similarity matrix panel by panel. A pair can only be
// an exact argmax if its approximation is within 2*bound of the approximate
// maximum, so rows keep every such column and columns keep every such row
// (pruned against a running maximum). Survivors are rescored exactly.
std::vector<Match> panel_mnn(const Array2f& q, const Array2f& c, detail::SimilarityPanels& panels) {
  const std::size_t nq = q.rows;
  const std::size_t nc = c.rows;
  const std::size_t stride = panels.panel_stride();
  const std::size_t step = panels.panel_rows();
  // Thresholds are formed in float; the extra term covers that rounding.
  const double magnitude = max_row_norm(q) * max_row_norm(c) + panels.error_bound();
  const auto window = static_cast<float>(2.0 * panels.error_bound() * (1.0 + 1e-6) + 1e-6 * magnitude + 1e-30);

  std::vector<float> panel(step * stride);
  std::vector<float> col_max(nc, -std::numeric_limits<float>::infinity());
  std::vector<float> col_thr(nc + kChunk, std::numeric_limits<float>::infinity());
  std::fill(col_thr.begin(), col_thr.begin() + static_cast<std::ptrdiff_t>(nc),
            -std::numeric_limits<float>::infinity());
  std::vector<std::vector<ColumnCandidate>> col_lists(nc);
  std::vector<std::uint32_t> nn_q(nq, kNone);
  std::vector<std::uint32_t> row_cands;
  std::vector<std::uint32_t> hits(nc);

  const auto push_column = [&](std::size_t j, std::uint32_t i, float a) {
    if (a > col_max[j]) {
      col_max[j] = a;
      col_thr[j] = a - window;
    }
    auto& list = col_lists[j];
    list.push_back({i, a});
    if (list.size() >= 64 && (list.size() & (list.size() - 1)) == 0) {
      const float thr = col_thr[j];
      std::erase_if(list, [thr](const ColumnCandidate& e) { return e.approx < thr; });
    }
  };

  for (std::size_t first = 0; first < nq; first += step) {
    const std::size_t count = std::min(step, nq - first);
    panels.compute(first, count, panel.data());
    for (std::size_t r = 0; r < count; ++r) {
      const float* a = panel.data() + r * stride;
      const float row_thr = row_max(a, nc) - window;
      const auto i = static_cast<std::uint32_t>(first + r);
      row_cands.clear();
      const std::size_t h = row_hits(a, col_thr.data(), row_thr, nc, hits.data());
      for (std::size_t k = 0; k < h; ++k) {
        const std::uint32_t j = hits[k];
        const float v = a[j];
        if (v >= row_thr) row_cands.push_back(j);
        if (v >= col_thr[j]) push_column(j, i, v);
      }
      nn_q[i] = exact_best(q, i, c, row_cands);
    }
  }

  std::vector<std::uint32_t> nn_c(nc, kNone);
  std::vector<std::uint32_t> cands;
  for (std::size_t i = 0; i < nq; ++i) {
    const std::uint32_t j = nn_q[i];
    if (nn_c[j] != kNone) continue;
    cands.clear();
    for (const auto& e : col_lists[j])
      if (e.approx >= col_thr[j]) cands.push_back(e.row);
    std::sort(cands.begin(), cands.end());
    nn_c[j] = exact_best(c, j, q, cands);
  }

  std::vector<Match> out;
  for (std::size_t i = 0; i < nq; ++i)
    if (nn_c[nn_q[i]] == i) out.push_back({static_cast<std::uint32_t>(i), nn_q[i]});
  return out;
}

}  // namespace

std::vector<Match> match_mutual_nn(const Array2f& query, const Array2f& candidate, SimilarityBackend backend) {
  if (query.rows == 0 || candidate.rows == 0) return {};
  if (query.cols != candidate.cols) throw std::invalid_argument("match_mutual_nn: descriptor dimensions differ");
  if (query.rows >= kNone || candidate.rows >= kNone) throw std::invalid_argument("match_mutual_nn: too many features");

  if (backend == SimilarityBackend::kReference || query.rows * candidate.rows <= 1024)
    return reference_mnn(query, candidate);
  if (backend != SimilarityBackend::kFloat32) {
    if (auto amx = detail::make_amx_panels(query, candidate)) return panel_mnn(query, candidate, *amx);
  }
  Fp32Panels fp32(query, candidate);
  return panel_mnn(query, candidate, fp32);
}

std::vector<Match> match_mutual_nn(const LocalFeatureSet& query, const LocalFeatureSet& candidate,
                                   SimilarityBackend backend) {
  return match_mutual_nn(query.descriptors, candidate.descriptors, backend);
}

double ralm_score(std::span<const Match> matches, std::span<const float> r_q, std::span<const float> r_c) {
  double s = 0.0;
  for (const Match& m : matches) {
    if (m.u >= r_q.size() || m.v >= r_c.size()) throw std::out_of_range("ralm_score: match index outside reliability");
    s += std::sqrt(static_cast<double>(r_q[m.u]) * static_cast<double>(r_c[m.v]));
  }
  return s;
}

}  // namespace vpr
