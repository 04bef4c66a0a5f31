#include "vpr/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numbers>
#include <numeric>
#include <sstream>
#include <thread>

#include "vpr/errors.hpp"
#include "vpr/region.hpp"

namespace vpr {

double haversine_m(const Geotag& a, const Geotag& b) {
  constexpr double rad = std::numbers::pi / 180.0;
  const double dlat = (b.lat - a.lat) * rad;
  const double dlon = (b.lon - a.lon) * rad;
  const double s = std::sin(dlat / 2.0);
  const double t = std::sin(dlon / 2.0);
  const double h = s * s + std::cos(a.lat * rad) * std::cos(b.lat * rad) * t * t;
  return 2.0 * kEarthRadiusMetres * std::asin(std::min(1.0, std::sqrt(h)));
}

DatasetMode dataset_mode(const std::vector<IndexEntry>& entries) {
  std::size_t geo = 0;
  std::size_t seq = 0;
  for (const auto& e : entries) {
    if (e.geotag && e.frame_index) throw DataError("geotag", e.image_id + " has both a geotag and a frame index");
    if (!e.geotag && !e.frame_index) throw DataError("geotag", e.image_id + " has neither a geotag nor a frame index");
    (e.geotag ? geo : seq) += 1;
  }
  if (geo > 0 && seq > 0) throw DataError("geotag", "dataset mixes geotagged and sequential entries");
  return seq > 0 ? DatasetMode::kSequential : DatasetMode::kGeographic;
}

bool is_correct(const IndexEntry& query, const IndexEntry& candidate, DatasetMode mode, const CorrectnessParams& params) {
  if (mode == DatasetMode::kGeographic) {
    if (!query.geotag || !candidate.geotag) throw DataError("geotag", "geographic mode needs geotags on both entries");
    return haversine_m(*query.geotag, *candidate.geotag) <= params.max_distance_m;
  }
  if (!query.frame_index || !candidate.frame_index)
    throw DataError("frame_index", "sequential mode needs frame indices on both entries");
  const std::int64_t d = *query.frame_index - *candidate.frame_index;
  return (d < 0 ? -d : d) <= params.frame_tolerance;
}

IndexEntry prepare_entry(const ImageRecord& record, const SelectionParams& selection) {
  IndexEntry e = make_index_entry(record);
  if (record.local.empty() || !record.local.is_dense() || record.mask.empty()) {
    if (selection.top_fraction && record.local.is_dense())
      throw DataError("fused_mask", record.image_id + ": a top-fraction selection needs a fused mask");
    return e;
  }
  const double tf = selection.top_fraction.value_or(record.mask.top_fraction);
  const DiscriminativeMask mask = tf == record.mask.top_fraction ? record.mask : binarize_mask(record.mask, tf);
  e.local = select_local(record.local, mask, record.reliability, selection.cap);
  return e;
}

std::vector<IndexEntry> prepare_entries(const std::vector<ImageRecord>& records, const SelectionParams& selection) {
  std::vector<IndexEntry> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(prepare_entry(r, selection));
  return out;
}

double median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const std::size_t m = values.size() / 2;
  return values.size() % 2 == 1 ? values[m] : 0.5 * (values[m - 1] + values[m]);
}

namespace {

template <typename Fn>
void parallel_for(std::size_t count, std::size_t threads, Fn&& fn) {
  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, count));
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex m;
  const auto run = [&] {
    try {
      for (std::size_t i = next++; i < count; i = next++) fn(i);
    } catch (...) {
      const std::lock_guard lock(m);
      if (!failure) failure = std::current_exception();
      next = count;
    }
  };
  if (workers == 1) {
    run();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run);
  }
  if (failure) std::rethrow_exception(failure);
}

}  // namespace

RecallReport evaluate(const std::vector<IndexEntry>& queries, const SearchIndex& database, const RerankConfig& config,
                      const EvalOptions& options) {
  if (queries.empty()) throw DataError("queries", "empty query set");
  if (database.empty()) throw DataError("database", "empty database");
  if (options.ns.empty()) throw std::invalid_argument("evaluate: no recall cut-offs");
  const DatasetMode mode = dataset_mode(queries);
  if (dataset_mode(database.entries()) != mode) throw DataError("geotag", "queries and database use different modes");

  RecallReport report;
  report.ns = options.ns;
  report.num_queries = queries.size();
  report.hits.assign(options.ns.size(), std::vector<std::uint8_t>(queries.size(), 0));
  report.k_used.assign(queries.size(), 0);
  report.rerank_seconds.assign(queries.size(), 0.0);
  std::vector<std::size_t> pool_bytes(queries.size(), 0);

  RerankConfig cfg = config;
  if (options.threads > 1) cfg.threads = 1;

  parallel_for(queries.size(), options.threads, [&](std::size_t qi) {
    const RankedResult res = rerank(queries[qi], database, cfg);
    report.k_used[qi] = res.k_used;
    report.rerank_seconds[qi] = res.rerank_seconds;
    pool_bytes[qi] = res.pool_bytes;
    std::size_t first_hit = res.candidates.size();
    for (std::size_t r = 0; r < res.candidates.size(); ++r)
      if (is_correct(queries[qi], database[res.candidates[r].index], mode, options.correctness)) {
        first_hit = r;
        break;
      }
    for (std::size_t n = 0; n < options.ns.size(); ++n) report.hits[n][qi] = first_hit < options.ns[n] ? 1 : 0;
  });

  report.recall.resize(options.ns.size());
  for (std::size_t n = 0; n < options.ns.size(); ++n) {
    const auto h = std::accumulate(report.hits[n].begin(), report.hits[n].end(), std::size_t{0});
    report.recall[n] = static_cast<double>(h) / static_cast<double>(queries.size());
  }
  report.median_rerank_seconds = median(report.rerank_seconds);
  report.mean_rerank_seconds = std::accumulate(report.rerank_seconds.begin(), report.rerank_seconds.end(), 0.0) /
                               static_cast<double>(queries.size());
  report.peak_pool_bytes = *std::max_element(pool_bytes.begin(), pool_bytes.end());
  return report;
}

std::vector<AblationRow> ablation_sweep(const std::vector<ImageRecord>& queries, const std::vector<ImageRecord>& database,
                                        const std::vector<AblationPoint>& points, const EvalOptions& options) {
  std::vector<AblationRow> rows;
  std::optional<SelectionParams> built;
  std::vector<IndexEntry> q_entries;
  SearchIndex index;
  for (const auto& point : points) {
    const bool same = built && built->cap == point.selection.cap && built->top_fraction == point.selection.top_fraction;
    if (!same) {
      q_entries = prepare_entries(queries, point.selection);
      index = SearchIndex(prepare_entries(database, point.selection));
      built = point.selection;
    }
    rows.push_back({point, evaluate(q_entries, index, point.config, options)});
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os.precision(6);
  os << "label,top_fraction,dcs,fixed_k,ralm,sc,alpha,gamma,k_mean";
  if (!rows.empty())
    for (const std::size_t n : rows.front().report.ns) os << ",recall@" << n;
  os << ",median_rerank_ms,mean_rerank_ms,peak_pool_bytes\n";
  for (const auto& row : rows) {
    const auto& c = row.point.config;
    const auto& r = row.report;
    const double k_mean = r.k_used.empty() ? 0.0
                                           : static_cast<double>(std::accumulate(r.k_used.begin(), r.k_used.end(), std::size_t{0})) /
                                                 static_cast<double>(r.k_used.size());
    os << row.point.label << ',';
    if (row.point.selection.top_fraction) os << *row.point.selection.top_fraction;
    os << ',' << (c.toggles.dcs ? 1 : 0) << ',';
    if (!c.toggles.dcs) os << c.fixed_k.value_or(0);
    os << ',' << (c.toggles.ralm ? 1 : 0) << ',' << (c.toggles.sc ? 1 : 0) << ',' << c.scheduler.alpha << ','
       << c.gamma << ',' << k_mean;
    for (const double v : r.recall) os << ',' << v;
    os << ',' << r.median_rerank_seconds * 1e3 << ',' << r.mean_rerank_seconds * 1e3 << ',' << r.peak_pool_bytes
       << '\n';
  }
  return os.str();
}

}  // namespace vpr
