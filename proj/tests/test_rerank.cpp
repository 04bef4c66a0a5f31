#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "vpr/rerank.hpp"
#include "vpr/synth.hpp"

using namespace vpr;

namespace {

IndexEntry entry(std::string id, const std::vector<float>& global, LocalFeatureSet local = {}) {
  IndexEntry e;
  e.image_id = std::move(id);
  e.global.values = global;
  e.local = std::move(local);
  return e;
}

std::vector<double> sorted_desc(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  std::sort(v.begin(), v.end(), std::greater<>());
  return v;
}

}  // namespace

TEST_CASE("dcs_pool_size") {
  const SchedulerParams p;
  SUBCASE("all equal scores give the whole pool") {
    const std::vector<double> s(100, 0.7);
    const auto r = dcs_pool_size(s, p);
    CHECK(r.k == 100);
    CHECK(r.percentile == 1.0);
    CHECK(r.s_q == doctest::Approx(0.7));
  }
  SUBCASE("a step from ones to zeros") {
    std::vector<double> s(100, 0.0);
    std::fill(s.begin(), s.begin() + 60, 1.0);
    const auto r = dcs_pool_size(s, p);
    CHECK(r.s_q == 1.0);
    CHECK(r.k == 100);
    std::fill(s.begin(), s.end(), 0.0);
    std::fill(s.begin(), s.begin() + 30, 1.0);
    // S_q = 0.5, P = 0.7, k = floor(0.7 * 70 + 30)
    CHECK(dcs_pool_size(s, p).k == 79);
  }
  SUBCASE("alpha zero pins k_min") {
    SchedulerParams z;
    z.alpha = 0.0;
    std::mt19937_64 rng(1);
    for (int t = 0; t < 50; ++t) CHECK(dcs_pool_size(sorted_desc(rng, 100), z).k == 30);
  }
  SUBCASE("formula on random inputs") {
    std::mt19937_64 rng(2);
    for (int t = 0; t < 500; ++t) {
      SchedulerParams q;
      q.alpha = std::uniform_real_distribution<double>(0.0, 2.0)(rng);
      q.k_max = 10 + rng() % 100;
      q.k_min = 1 + rng() % q.k_max;
      q.k_prime = 1 + rng() % q.k_max;
      const auto s = sorted_desc(rng, q.k_max);
      const double sq = std::accumulate(s.begin(), s.begin() + static_cast<long>(q.k_prime), 0.0) / double(q.k_prime);
      const double pct = double(std::count_if(s.begin(), s.end(), [&](double x) { return x <= sq; })) / double(q.k_max);
      const double k = std::clamp(std::floor(q.alpha * pct * double(q.k_max - q.k_min) + double(q.k_min)), double(q.k_min),
                                  double(q.k_max));
      const auto r = dcs_pool_size(s, q);
      CHECK(r.k == static_cast<std::size_t>(k));
      CHECK(r.k >= q.k_min);
      CHECK(r.k <= q.k_max);
    }
  }
  CHECK_THROWS_AS(dcs_pool_size(std::vector<double>(99, 0.0), p), std::invalid_argument);
  std::vector<double> unsorted(100, 0.0);
  unsorted[50] = 1.0;
  CHECK_THROWS_AS(dcs_pool_size(unsorted, p), std::invalid_argument);
  SchedulerParams bad;
  bad.k_min = 101;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = {};
  bad.alpha = -0.1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("search index") {
  SearchIndex empty;
  CHECK(empty.empty());
  CHECK(empty.global_scores({{1, 0}}).empty());
  const SearchIndex idx({entry("a", {1, 0}), entry("b", {0.6f, 0.8f})});
  CHECK(idx.descriptor_length() == 2);
  const auto s = idx.global_scores({{0, 1}});
  CHECK(s[0] == 0.0);
  CHECK(s[1] == doctest::Approx(0.8));
  CHECK_THROWS_AS(idx.global_scores({{1, 0, 0}}), std::invalid_argument);
  CHECK_THROWS_AS(SearchIndex({entry("a", {1, 0}), entry("b", {1})}), std::invalid_argument);
}

TEST_CASE("rerank") {
  std::mt19937_64 rng(5);
  const GridShape grid{32, 32};
  std::vector<IndexEntry> entries;
  const Array2f globals = oracle::random_unit_rows(rng, 120, 16);
  for (std::size_t i = 0; i < 120; ++i)
    entries.push_back(entry("img" + std::to_string(1000 + i), {globals.row(i).begin(), globals.row(i).end()},
                            random_local_features(i, 40, 32, grid)));
  const SearchIndex index(entries);
  IndexEntry query = entries[7];

  SUBCASE("single image index") {
    const SearchIndex one({entries[3]});
    const auto r = rerank(query, one, {});
    REQUIRE(r.candidates.size() == 1);
    CHECK(r.k_max_used == 1);
    CHECK(r.k_used == 1);
    CHECK(r.candidates[0].reranked);
  }
  SUBCASE("fixed k = 0 is the global ranking") {
    RerankConfig c;
    c.toggles.dcs = false;
    c.fixed_k = 0;
    const auto r = rerank(query, index, c);
    const auto s = index.global_scores(query.global);
    std::vector<std::size_t> ref(s.size());
    std::iota(ref.begin(), ref.end(), std::size_t{0});
    std::stable_sort(ref.begin(), ref.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
    REQUIRE(r.candidates.size() == 100);
    for (std::size_t i = 0; i < 100; ++i) {
      CHECK(r.candidates[i].index == ref[i]);
      CHECK(!r.candidates[i].reranked);
      CHECK(r.candidates[i].s_final == 1000.0 * r.candidates[i].s_g);
    }
    CHECK(r.pool_bytes == 0);
  }
  SUBCASE("the query itself wins unless excluded") {
    const auto r = rerank(query, index, {});
    CHECK(r.candidates[0].image_id == query.image_id);
    CHECK(r.candidates[0].matches == 40);
    RerankConfig c;
    c.exclude_self = true;
    const auto x = rerank(query, index, c);
    CHECK(x.candidates.size() == 100);
    for (const auto& cand : x.candidates) CHECK(cand.image_id != query.image_id);
  }
  SUBCASE("reranked candidates fuse scores and are ordered") {
    RerankConfig c;
    c.toggles.dcs = false;
    c.fixed_k = 25;
    c.gamma = 3.0;
    const auto r = rerank(query, index, c);
    CHECK(r.k_used == 25);
    for (std::size_t i = 0; i < 100; ++i) CHECK(r.candidates[i].reranked == (i < 25));
    for (std::size_t i = 0; i < 25; ++i) {
      const auto& cand = r.candidates[i];
      const auto m = match_mutual_nn(query.local, index[cand.index].local);
      CHECK(cand.s_l == ralm_score(m, query.local.reliability, index[cand.index].local.reliability));
      CHECK(cand.s_final == 3.0 * cand.s_g + cand.s_l);
      if (i > 0) CHECK(r.candidates[i - 1].s_final >= cand.s_final);
    }
    for (std::size_t i = 26; i < 100; ++i) CHECK(r.candidates[i - 1].s_g >= r.candidates[i].s_g);

    c.toggles.ralm = false;
    for (const auto& cand : rerank(query, index, c).candidates)
      if (cand.reranked) CHECK(cand.s_l == double(cand.matches));

    c.toggles.sc = false;
    const auto plain = rerank(query, index, c);
    for (std::size_t i = 0; i < 25; ++i) CHECK(plain.candidates[i].s_final == plain.candidates[i].s_l);
    for (std::size_t i = 1; i < 25; ++i) {
      const auto& a = plain.candidates[i - 1];
      const auto& b = plain.candidates[i];
      CHECK((a.s_l > b.s_l || (a.s_l == b.s_l && a.s_g >= b.s_g)));
    }
  }
  SUBCASE("thread count does not change the result") {
    RerankConfig c;
    const auto base = rerank(query, index, c);
    c.threads = 4;
    const auto multi = rerank(query, index, c);
    REQUIRE(base.candidates.size() == multi.candidates.size());
    for (std::size_t i = 0; i < base.candidates.size(); ++i) {
      CHECK(base.candidates[i].index == multi.candidates[i].index);
      CHECK(base.candidates[i].s_final == multi.candidates[i].s_final);
    }
    CHECK(base.k_used == multi.k_used);
  }
  SUBCASE("equal global scores fall back to image id") {
    const SearchIndex tied({entry("c", {1, 0}), entry("a", {1, 0}), entry("b", {1, 0})});
    RerankConfig c;
    c.toggles.dcs = false;
    c.fixed_k = 0;
    const auto r = rerank(entry("q", {1, 0}), tied, c);
    CHECK(r.candidates[0].image_id == "a");
    CHECK(r.candidates[1].image_id == "b");
    CHECK(r.candidates[2].image_id == "c");
  }
  RerankConfig bad;
  bad.gamma = INFINITY;
  CHECK_THROWS_AS(rerank(query, index, bad), std::invalid_argument);
}
