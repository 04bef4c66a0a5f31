#include "vpr/rerank.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <mutex>
#include <stdexcept>
#include <thread>

#include "vpr/dot.hpp"

namespace vpr {

void SchedulerParams::validate() const {
  if (k_min < 1 || k_min > k_max) throw std::invalid_argument("scheduler: need 1 <= k_min <= k_max");
  if (k_prime < 1 || k_prime > k_max) throw std::invalid_argument("scheduler: need 1 <= k_prime <= k_max");
  if (!std::isfinite(alpha) || alpha < 0.0) throw std::invalid_argument("scheduler: alpha must be finite and >= 0");
}

PoolSize dcs_pool_size(std::span<const double> top_scores, const SchedulerParams& params) {
  params.validate();
  if (top_scores.size() != params.k_max)
    throw std::invalid_argument("dcs_pool_size: expected exactly k_max scores");
  for (std::size_t i = 1; i < top_scores.size(); ++i)
    if (!(top_scores[i] <= top_scores[i - 1])) throw std::invalid_argument("dcs_pool_size: scores not sorted descending");

  PoolSize out;
  // Neumaier summation keeps S_q on tie levels shared by the scores
  double sum = 0.0;
  double comp = 0.0;
  for (std::size_t i = 0; i < params.k_prime; ++i) {
    const double x = top_scores[i];
    const double t = sum + x;
    comp += std::abs(sum) >= std::abs(x) ? (sum - t) + x : (x - t) + sum;
    sum = t;
  }
  sum += comp;
  // the rounded mean can fall outside [min, max] of the averaged scores
  out.s_q = std::clamp(sum / static_cast<double>(params.k_prime), top_scores[params.k_prime - 1], top_scores[0]);
  std::size_t below = 0;
  for (const double s : top_scores) below += s <= out.s_q ? 1 : 0;
  out.percentile = static_cast<double>(below) / static_cast<double>(params.k_max);
  const double span = static_cast<double>(params.k_max - params.k_min);
  const double raw = std::floor(params.alpha * out.percentile * span + static_cast<double>(params.k_min));
  out.k = static_cast<std::size_t>(std::clamp(raw, static_cast<double>(params.k_min), static_cast<double>(params.k_max)));
  return out;
}

IndexEntry make_index_entry(const ImageRecord& record) {
  return {record.image_id, record.geotag, record.frame_index, record.global, record.local};
}

SearchIndex::SearchIndex(std::vector<IndexEntry> entries) : entries_(std::move(entries)) {
  if (entries_.empty()) return;
  dim_ = entries_.front().global.values.size();
  globals_.reserve(dim_ * entries_.size());
  for (const auto& e : entries_) {
    if (e.global.values.size() != dim_)
      throw std::invalid_argument("search index: global descriptor length differs for " + e.image_id);
    globals_.insert(globals_.end(), e.global.values.begin(), e.global.values.end());
  }
}

std::vector<double> SearchIndex::global_scores(const GlobalDescriptor& query) const {
  if (!entries_.empty() && query.values.size() != dim_)
    throw std::invalid_argument("search index: query descriptor length differs from the index");
  std::vector<double> out(entries_.size());
  for (std::size_t i = 0; i < entries_.size(); ++i)
    out[i] = std::clamp(dot_f64(query.values, {globals_.data() + i * dim_, dim_}), -1.0, 1.0);
  return out;
}

void RerankConfig::validate() const {
  scheduler.validate();
  if (!std::isfinite(gamma)) throw std::invalid_argument("rerank: gamma must be finite");
}

namespace {

std::size_t local_bytes(const LocalFeatureSet& s) {
  return s.descriptors.values.size() * sizeof(float) + s.reliability.size() * sizeof(float) +
         s.positions.size() * sizeof(GridPos);
}

double local_score(const IndexEntry& query, const IndexEntry& cand, const RerankConfig& config,
                   std::size_t& match_count) {
  const auto matches = match_mutual_nn(query.local, cand.local, config.backend);
  match_count = matches.size();
  if (!config.toggles.ralm) return static_cast<double>(matches.size());
  return ralm_score(matches, query.local.reliability, cand.local.reliability);
}

}  // namespace

RankedResult rerank(const IndexEntry& query, const SearchIndex& index, const RerankConfig& config) {
  config.validate();
  RankedResult result;
  result.dcs = config.toggles.dcs;

  // First stage: exact scores, ordered by S_g desc then image id.
  const std::vector<double> scores = index.global_scores(query.global);
  std::vector<std::size_t> order;
  order.reserve(index.size());
  for (std::size_t i = 0; i < index.size(); ++i)
    if (!config.exclude_self || index[i].image_id != query.image_id) order.push_back(i);
  if (order.empty()) return result;

  SchedulerParams sched = config.scheduler;
  if (order.size() < sched.k_max) {
    static std::atomic<bool> warned{false};
    if (!warned.exchange(true))
      spdlog::warn("index has {} usable entries, lowering k_max from {} to {}", order.size(), sched.k_max, order.size());
    sched.k_max = order.size();
    sched.k_min = std::min(sched.k_min, sched.k_max);
    sched.k_prime = std::min(sched.k_prime, sched.k_max);
  }
  const auto better = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    if (index[a].image_id != index[b].image_id) return index[a].image_id < index[b].image_id;
    return a < b;
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(sched.k_max), order.end(), better);
  order.resize(sched.k_max);
  result.k_max_used = sched.k_max;

  std::vector<double> top(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) top[i] = scores[order[i]];

  std::size_t k = 0;
  if (config.toggles.dcs) {
    const PoolSize pool = dcs_pool_size(top, sched);
    k = pool.k;
    result.s_q = pool.s_q;
    result.percentile = pool.percentile;
  } else {
    k = std::min(config.fixed_k.value_or(0), sched.k_max);
  }
  result.k_used = k;

  // Second stage over the first k candidates.
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<RankedCandidate> cands(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    auto& c = cands[i];
    c.index = order[i];
    c.image_id = index[order[i]].image_id;
    c.s_g = top[i];
    c.s_final = config.gamma * c.s_g;
  }
  if (k > 0) {
    result.pool_bytes = local_bytes(query.local);
    for (std::size_t i = 0; i < k; ++i) result.pool_bytes += local_bytes(index[order[i]].local);

    const std::size_t workers = std::max<std::size_t>(1, std::min(config.threads, k));
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    const auto work = [&] {
      try {
        for (std::size_t i = next++; i < k; i = next++) {
          auto& c = cands[i];
          c.s_l = local_score(query, index[c.index], config, c.matches);
          c.s_final = config.toggles.sc ? fuse_scores(c.s_g, c.s_l, config.gamma) : c.s_l;
          c.reranked = true;
        }
      } catch (...) {
        const std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = k;
      }
    };
    if (workers == 1) {
      work();
    } else {
      std::vector<std::jthread> pool;
      pool.reserve(workers);
      for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    }
    if (failure) std::rethrow_exception(failure);

    std::stable_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(k),
                     [&](const RankedCandidate& a, const RankedCandidate& b) {
                       if (a.s_final != b.s_final) return a.s_final > b.s_final;
                       return a.s_g > b.s_g;
                     });
  }
  result.rerank_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  result.candidates = std::move(cands);
  return result;
}

}  // namespace vpr
