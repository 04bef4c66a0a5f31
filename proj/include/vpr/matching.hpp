#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "vpr/dot.hpp"
#include "vpr/types.hpp"

namespace vpr {

struct Match {
  std::uint32_t u = 0;  // query feature index
  std::uint32_t v = 0;  // candidate feature index
  bool operator==(const Match&) const = default;
};

/// How the dense similarity sweep is evaluated. Every backend returns the
/// same matches: approximate similarities only prune, and the surviving
/// candidates are rescored with descriptor_similarity.
enum class SimilarityBackend {
  kAuto,       // AMX when usable, otherwise fp32
  kReference,  // exact scores for every pair
  kFloat32,    // fp32 GEMM panels
  kAmxBf16,    // bf16 tile panels; falls back to fp32 when AMX is unusable
};

/// Local similarity: dot_f64 of the two descriptors.
inline double descriptor_similarity(std::span<const float> a, std::span<const float> b) noexcept {
  return dot_f64(a, b);
}

/// True when the CPU and OS allow AMX bf16 tiles in this process.
bool amx_available();

/// Mutual nearest neighbours under descriptor_similarity. Argmax ties go to
/// the smallest index. Output is sorted by u.
std::vector<Match> match_mutual_nn(const Array2f& query, const Array2f& candidate,
                                   SimilarityBackend backend = SimilarityBackend::kAuto);

std::vector<Match> match_mutual_nn(const LocalFeatureSet& query, const LocalFeatureSet& candidate,
                                   SimilarityBackend backend = SimilarityBackend::kAuto);

/// Sum over matches of sqrt(r_q[u] * r_c[v]). Throws std::out_of_range for
/// match indices outside the reliability vectors.
double ralm_score(std::span<const Match> matches, std::span<const float> r_q, std::span<const float> r_c);

/// gamma * s_g + s_l.
inline double fuse_scores(double s_g, double s_l, double gamma) noexcept { return gamma * s_g + s_l; }

namespace detail {

/// Approximate similarity panels for the mutual-NN sweep. Implementations
/// guarantee |approx - exact| <= error_bound() for every pair.
class SimilarityPanels {
 public:
  virtual ~SimilarityPanels() = default;
  /// Rows per panel; panels start at multiples of this.
  [[nodiscard]] virtual std::size_t panel_rows() const = 0;
  /// Row stride of the panel buffer (>= candidate count).
  [[nodiscard]] virtual std::size_t panel_stride() const = 0;
  [[nodiscard]] virtual double error_bound() const = 0;
  /// Fill out[r * panel_stride() + j] for query rows [first, first + count).
  virtual void compute(std::size_t first, std::size_t count, float* out) = 0;
};

/// Builds the AMX implementation, or returns nullptr when AMX is unusable.
std::unique_ptr<SimilarityPanels> make_amx_panels(const Array2f& query, const Array2f& candidate);

}  // namespace detail

}  // namespace vpr
