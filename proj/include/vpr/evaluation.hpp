#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vpr/rerank.hpp"
#include "vpr/types.hpp"

namespace vpr {

enum class DatasetMode { kGeographic, kSequential };

inline constexpr double kEarthRadiusMetres = 6371000.0;

struct CorrectnessParams {
  double max_distance_m = 25.0;
  std::int64_t frame_tolerance = 10;
};

/// Great-circle distance in metres on a sphere of radius kEarthRadiusMetres.
double haversine_m(const Geotag& a, const Geotag& b);

/// Mode shared by all entries. Throws DataError when entries mix geotags and
/// frame indices or carry neither.
DatasetMode dataset_mode(const std::vector<IndexEntry>& entries);

/// Geographic: haversine distance <= max_distance_m. Sequential: frame
/// difference within +-frame_tolerance. Throws DataError on a mode mismatch.
bool is_correct(const IndexEntry& query, const IndexEntry& candidate, DatasetMode mode,
                const CorrectnessParams& params = {});

/// How dense local grids are reduced before indexing. Records whose local
/// features are already a subset are used as they are.
struct SelectionParams {
  std::optional<double> top_fraction;  // unset: the fraction stored with the mask
  std::size_t cap = kDefaultLocalCap;
};

IndexEntry prepare_entry(const ImageRecord& record, const SelectionParams& selection = {});
std::vector<IndexEntry> prepare_entries(const std::vector<ImageRecord>& records, const SelectionParams& selection = {});

struct RecallReport {
  std::vector<std::size_t> ns{1, 5, 10};
  std::vector<double> recall;                  // one per N
  std::size_t num_queries = 0;
  std::vector<std::vector<std::uint8_t>> hits;  // [N][query]
  std::vector<std::size_t> k_used;              // per query
  std::vector<double> rerank_seconds;           // per query
  double median_rerank_seconds = 0.0;
  double mean_rerank_seconds = 0.0;
  std::size_t peak_pool_bytes = 0;
};

struct EvalOptions {
  std::vector<std::size_t> ns{1, 5, 10};
  CorrectnessParams correctness;
  std::size_t threads = 1;  // queries evaluated concurrently
};

/// Run rerank for every query and score the final rankings.
RecallReport evaluate(const std::vector<IndexEntry>& queries, const SearchIndex& database, const RerankConfig& config,
                      const EvalOptions& options = {});

double median(std::vector<double> values);

struct AblationPoint {
  std::string label;
  RerankConfig config;
  SelectionParams selection;
};

struct AblationRow {
  AblationPoint point;
  RecallReport report;
};

/// Evaluate each configuration. Index entries are rebuilt only when the
/// selection differs from the previous point.
std::vector<AblationRow> ablation_sweep(const std::vector<ImageRecord>& queries, const std::vector<ImageRecord>& database,
                                        const std::vector<AblationPoint>& points, const EvalOptions& options = {});

/// CSV with a header row and one row per configuration.
std::string ablation_csv(const std::vector<AblationRow>& rows);

}  // namespace vpr
