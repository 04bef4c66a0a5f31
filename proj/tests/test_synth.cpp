#include <doctest.h>

#include <cmath>
#include <set>

#include "vpr/evaluation.hpp"
#include "vpr/mining.hpp"
#include "vpr/synth.hpp"

using namespace vpr;

TEST_CASE("generators are deterministic") {
  SceneParams sp;
  sp.seed = 17;
  sp.noise_sigma = 0.05;
  const auto a = gen_cluster_scene(sp);
  const auto b = gen_cluster_scene(sp);
  CHECK(a.anchor == b.anchor);
  CHECK(a.positive == b.positive);
  CHECK(a.planted == b.planted);
  sp.seed = 18;
  CHECK(!(gen_cluster_scene(sp).anchor == a.anchor));

  GeoParams gp;
  gp.size = 30;
  gp.queries = 4;
  const auto g1 = gen_geo_index(gp);
  const auto g2 = gen_geo_index(gp);
  CHECK(g1.database == g2.database);
  CHECK(g1.queries == g2.queries);

  const auto p1 = gen_planted_rerank(3);
  const auto p2 = gen_planted_rerank(3);
  CHECK(p1.database == p2.database);
  CHECK(p1.query == p2.query);
  CHECK(random_local_features(5, 100, 16, {20, 20}) == random_local_features(5, 100, 16, {20, 20}));
}

TEST_CASE("cluster scene structure") {
  const auto s = gen_cluster_scene({.seed = 1});
  CHECK(s.anchor.patch_shape == GridShape{8, 8});
  CHECK(s.anchor.local.grid_height == 16);
  CHECK(s.anchor.local.is_dense());
  CHECK(s.planted.size() == 48);
  std::set<std::size_t> us, vs;
  for (const auto& [u, v] : s.planted) {
    CHECK(us.insert(u).second);
    CHECK(vs.insert(v).second);
    CHECK(token_cosine(s.anchor.tokens.token(u), s.positive.tokens.token(v)) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(s.anchor.assignment->probs.row(u)[0] == s.positive.assignment->probs.row(v)[0]);
  }
  CHECK_THROWS_AS(gen_cluster_scene({.grid = {0, 4}}), std::invalid_argument);
  CHECK_THROWS_AS(gen_cluster_scene({.noise_sigma = -1.0}), std::invalid_argument);
}

TEST_CASE("small noise keeps planted partners above the mining threshold") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SceneParams sp;
    sp.seed = seed;
    sp.noise_sigma = 0.05;
    const auto s = gen_cluster_scene(sp);
    for (const auto& [u, v] : s.planted)
      CHECK(token_cosine(s.anchor.tokens.token(u), s.positive.tokens.token(v)) > 0.8);
  }
}

TEST_CASE("geo dataset layout") {
  GeoParams gp;
  gp.size = 10;
  gp.queries = 3;
  const auto g = gen_geo_index(gp);
  REQUIRE(g.database.size() == 10);
  CHECK(g.database[0].image_id == "db00000");
  CHECK(g.queries[2].image_id == "q00002");
  // images of one place lie within twice the spread of each other
  CHECK(haversine_m(*g.database[0].geotag, *g.database[3].geotag) <= 2 * gp.cluster_spread_m + 1e-6);
  CHECK(haversine_m(*g.database[0].geotag, *g.database[4].geotag) > 25.0);
  for (const auto& r : g.database) {
    CHECK(r.local.size() == gp.landmarks + gp.distractors);
    CHECK(r.global.values.size() == gp.global_dim);
  }
  CHECK_THROWS_AS(gen_geo_index({.size = 0}), std::invalid_argument);
  GeoParams bad;
  bad.local_grid = {16, 16};
  bad.dense_patch_grid = {5, 5};
  CHECK_THROWS_AS(gen_geo_index(bad), std::invalid_argument);
}

TEST_CASE("geo dataset is retrievable") {
  GeoParams gp;
  gp.seed = 4;
  gp.size = 400;
  gp.queries = 40;
  const auto g = gen_geo_index(gp);
  const auto r = evaluate(prepare_entries(g.queries), SearchIndex(prepare_entries(g.database)), {});
  CHECK(r.recall[0] >= 0.95);
}

TEST_CASE("planted rerank case") {
  const auto p = gen_planted_rerank(11);
  CHECK(p.database.size() == 200);
  CHECK(p.true_global_rank == 3);
  CHECK(p.true_id == "db00002");
  CHECK_THROWS_AS(gen_planted_rerank(1, 2), std::invalid_argument);
}

TEST_CASE("random_local_features") {
  const auto s = random_local_features(2, 50, 8, {10, 10});
  CHECK(s.size() == 50);
  for (std::size_t i = 1; i < s.size(); ++i) {
    const auto a = s.positions[i - 1], b = s.positions[i];
    CHECK((a.row < b.row || (a.row == b.row && a.col < b.col)));
  }
  for (std::size_t i = 0; i < s.size(); ++i) {
    double n = 0;
    for (const float v : s.descriptors.row(i)) n += double(v) * v;
    CHECK(n == doctest::Approx(1.0).epsilon(1e-6));
  }
  CHECK_THROWS_AS(random_local_features(2, 101, 8, {10, 10}), std::invalid_argument);
}
