#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vpr/matching.hpp"
#include "vpr/types.hpp"

namespace vpr {

struct SchedulerParams {
  double alpha = 1.0;
  std::size_t k_min = 30;
  std::size_t k_max = 100;
  std::size_t k_prime = 60;
  void validate() const;
};

struct PoolSize {
  std::size_t k = 0;
  double s_q = 0.0;
  double percentile = 0.0;
};

/// Dynamic pool size from the top-k_max global scores (sorted descending,
/// exactly k_max entries). S_q is the mean of the first k' scores, P the
/// fraction of scores <= S_q, and k = floor(alpha * P * (k_max - k_min) + k_min)
/// clamped to [k_min, k_max].
PoolSize dcs_pool_size(std::span<const double> top_scores, const SchedulerParams& params);

/// Entry of the search index. Only what re-ranking needs is kept.
struct IndexEntry {
  std::string image_id;
  std::optional<Geotag> geotag;
  std::optional<std::int64_t> frame_index;
  GlobalDescriptor global;
  LocalFeatureSet local;
};

IndexEntry make_index_entry(const ImageRecord& record);

/// Immutable after construction; global descriptors are also stored
/// contiguously for the brute-force first stage.
class SearchIndex {
 public:
  SearchIndex() = default;
  explicit SearchIndex(std::vector<IndexEntry> entries);

  [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }
  [[nodiscard]] bool empty() const noexcept { return entries_.empty(); }
  [[nodiscard]] const IndexEntry& operator[](std::size_t i) const { return entries_[i]; }
  [[nodiscard]] const std::vector<IndexEntry>& entries() const noexcept { return entries_; }
  [[nodiscard]] std::size_t descriptor_length() const noexcept { return dim_; }

  /// Global similarity of the query to every entry, in index order.
  [[nodiscard]] std::vector<double> global_scores(const GlobalDescriptor& query) const;

 private:
  std::vector<IndexEntry> entries_;
  std::vector<float> globals_;
  std::size_t dim_ = 0;
};

struct RerankToggles {
  bool dcs = true;
  bool ralm = true;
  bool sc = true;
};

struct RerankConfig {
  SchedulerParams scheduler;
  double gamma = 1000.0;
  RerankToggles toggles;
  std::optional<std::size_t> fixed_k;  // used when toggles.dcs is false
  SimilarityBackend backend = SimilarityBackend::kAuto;
  std::size_t threads = 1;
  bool exclude_self = false;  // drop index entries whose id equals the query id
  void validate() const;
};

struct RankedCandidate {
  std::size_t index = 0;  // position in the SearchIndex
  std::string image_id;
  double s_g = 0.0;
  double s_l = 0.0;
  double s_final = 0.0;
  bool reranked = false;
  std::size_t matches = 0;
};

struct RankedResult {
  std::vector<RankedCandidate> candidates;
  std::size_t k_used = 0;
  std::size_t k_max_used = 0;
  double s_q = 0.0;
  double percentile = 0.0;
  bool dcs = false;
  double rerank_seconds = 0.0;     // local matching and fusion only
  std::size_t pool_bytes = 0;      // local features touched by the re-rank
};

/// Two-stage retrieval for one query: exact global top-k_max, pool size from
/// DCS (or the fixed k), local re-ranking of the pool, and fusion. Re-ranked
/// candidates come first ordered by S_final (by S_l then S_g when sc is off);
/// the rest of the k_max pool follows in global order with S_final = gamma*S_g.
RankedResult rerank(const IndexEntry& query, const SearchIndex& index, const RerankConfig& config);

}  // namespace vpr
