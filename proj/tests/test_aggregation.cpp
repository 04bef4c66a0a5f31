#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "vpr/aggregation.hpp"

using namespace vpr;

namespace {

ClusterParams random_params(std::mt19937_64& rng, std::size_t m, std::size_t d, std::size_t l, std::size_t g,
                            bool projections) {
  std::normal_distribution<float> n;
  ClusterParams p;
  p.clusters = m;
  p.dim = d;
  p.reduced_dim = l;
  p.class_dim = g;
  p.weights = Array2f(m, d);
  for (auto& v : p.weights.values) v = n(rng);
  for (std::size_t j = 0; j < m; ++j) p.biases.push_back(n(rng));
  p.dustbin_score = n(rng);
  if (projections) {
    p.projection = Array2f(d, l);
    for (auto& v : p.projection.values) v = n(rng);
    if (g > 0) {
      p.class_projection = Array2f(d, g);
      for (auto& v : p.class_projection.values) v = n(rng);
    }
  }
  return p;
}

PatchGrid random_grid(std::mt19937_64& rng, std::size_t h, std::size_t w, std::size_t d) {
  std::normal_distribution<float> n;
  PatchGrid g{h, w, d, {}};
  g.tokens.resize(h * w * d);
  for (auto& v : g.tokens) v = n(rng);
  return g;
}

}  // namespace

TEST_CASE("score_matrix") {
  ClusterParams p;
  p.clusters = 2;
  p.dim = 2;
  p.reduced_dim = 1;
  p.weights = Array2f(2, 2, 0.0f);
  p.biases = {0.0f, 0.0f};
  p.dustbin_score = 0.0f;
  const PatchGrid g{1, 2, 2, {1, 0, 0.3f, -2}};
  for (const double v : score_matrix(g, p).values) CHECK(v == 1.0);

  p.weights(0, 0) = 1.0f;
  CHECK(score_matrix(PatchGrid{1, 1, 2, {1, 0}}, p)(0, 0) == doctest::Approx(std::exp(1.0)).epsilon(1e-15));

  std::mt19937_64 rng(3);
  const ClusterParams q = random_params(rng, 3, 5, 2, 0, false);
  const PatchGrid t = random_grid(rng, 2, 2, 5);
  const Array2d s = score_matrix(t, q);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      long double z = q.biases[j];
      for (std::size_t k = 0; k < 5; ++k) z += static_cast<long double>(q.weights(j, k)) * t.tokens[i * 5 + k];
      CHECK(std::abs(s(i, j) / std::exp(static_cast<double>(z)) - 1.0) < 1e-12);
    }
    CHECK(s(i, 3) == doctest::Approx(std::exp(double(q.dustbin_score))).epsilon(1e-15));
  }
  CHECK_THROWS_AS(score_matrix(random_grid(rng, 1, 1, 4), q), std::invalid_argument);
  // huge logits overflow exp but not the log form
  ClusterParams big = q;
  for (auto& v : big.weights.values) v = 1e4f;
  CHECK_THROWS_AS(score_matrix(PatchGrid{1, 1, 5, {1, 1, 1, 1, 1}}, big), std::range_error);
  CHECK(std::isfinite(log_score_matrix(PatchGrid{1, 1, 5, {1, 1, 1, 1, 1}}, big)(0, 0)));
}

TEST_CASE("sinkhorn_assign") {
  SUBCASE("symmetric single token") {
    const auto a = sinkhorn_assign(Array2d(1, 2, 1.0), 3, {1, 1});
    CHECK(a.probs(0, 0) == doctest::Approx(0.5));
    CHECK(a.probs(0, 1) == doctest::Approx(0.5));
    CHECK(a.salience[0] == doctest::Approx(0.5));
  }
  SUBCASE("identities and the plain oracle") {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> n(0.0, 1.5);
    for (int t = 0; t < 200; ++t) {
      const std::size_t rows = 1 + rng() % 40, cols = 2 + rng() % 10;
      Array2d s(rows, cols);
      for (auto& v : s.values) v = std::exp(n(rng));
      for (const std::size_t iters : {1u, 3u, 100u}) {
        const auto a = sinkhorn_assign(s, iters, {1, rows});
        const Array2d ref = oracle::sinkhorn(s, iters);
        for (std::size_t i = 0; i < rows; ++i) {
          double sum = 0;
          for (std::size_t j = 0; j < cols; ++j) {
            sum += a.probs(i, j);
            CHECK(std::abs(a.probs(i, j) - ref(i, j)) < 1e-9);
          }
          CHECK(std::abs(sum - 1.0) < 1e-9);
          CHECK(std::abs(a.salience[i] - (1.0 - a.probs(i, cols - 1))) < 1e-9);
          CHECK(a.mask_a.values[i] == a.salience[i]);
        }
      }
    }
  }
  SUBCASE("converges to the target marginals") {
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> u(0.5, 2.0);
    Array2d s(3, 3);
    for (auto& v : s.values) v = u(rng);
    const auto a = sinkhorn_assign(s, 100, {3, 1});
    for (std::size_t j = 0; j < 3; ++j) {
      double col = 0;
      for (std::size_t i = 0; i < 3; ++i) col += a.probs(i, j);
      CHECK(col == doctest::Approx(1.0).epsilon(1e-5));  // n / (M+1) = 1
    }
  }
  CHECK_THROWS_AS(sinkhorn_assign(Array2d(1, 2, 0.0), 3, {1, 1}), std::invalid_argument);
  CHECK_THROWS_AS(sinkhorn_assign(Array2d(1, 2, 1.0), 0, {1, 1}), std::invalid_argument);
  CHECK_THROWS_AS(sinkhorn_assign(Array2d(2, 2, 1.0), 3, {1, 1}), std::invalid_argument);
}

TEST_CASE("aggregate_global") {
  std::mt19937_64 rng(21);
  SUBCASE("naive summation oracle") {
    for (const bool proj : {false, true}) {
      const ClusterParams p = random_params(rng, 3, 6, 4, 2, proj);
      const PatchGrid g = random_grid(rng, 2, 2, 6);
      const ClassToken cls{{0.1f, -0.4f, 0.9f, 0.2f, 0.0f, 0.3f}};
      const auto a = assign_tokens(g, p);
      const auto d = aggregate_global(g, cls, a, p);
      REQUIRE(d.values.size() == 3 * 4 + 2);

      std::vector<double> ref(14, 0.0);
      for (std::size_t j = 0; j < 3; ++j) {
        std::vector<double> block(4, 0.0);
        for (std::size_t i = 0; i < 4; ++i)
          for (std::size_t k = 0; k < 4; ++k) {
            double pt = 0;
            if (proj)
              for (std::size_t e = 0; e < 6; ++e) pt += g.tokens[i * 6 + e] * double(p.projection(e, k));
            else
              pt = g.tokens[i * 6 + k];
            block[k] += a.probs(i, j) * pt;
          }
        double n = 0;
        for (const double v : block) n += v * v;
        for (std::size_t k = 0; k < 4; ++k) ref[j * 4 + k] = block[k] / std::sqrt(n);
      }
      for (std::size_t k = 0; k < 2; ++k) {
        double v = 0;
        if (proj)
          for (std::size_t e = 0; e < 6; ++e) v += cls.values[e] * double(p.class_projection(e, k));
        else
          v = cls.values[k];
        ref[12 + k] = v;
      }
      double n = 0;
      for (const double v : ref) n += v * v;
      for (std::size_t k = 0; k < 14; ++k) CHECK(std::abs(d.values[k] - ref[k] / std::sqrt(n)) < 1e-6);
    }
  }
  SUBCASE("identical tokens and uniform assignment") {
    const ClusterParams p = random_params(rng, 4, 5, 3, 0, true);
    PatchGrid g{2, 2, 5, {}};
    for (int i = 0; i < 4; ++i) g.tokens.insert(g.tokens.end(), {0.3f, -1.0f, 0.5f, 2.0f, 0.1f});
    const auto a = sinkhorn_assign(Array2d(4, 5, 1.0), 3, {2, 2});
    const auto d = aggregate_global(g, {}, a, p);
    double n = 0;
    for (const float v : d.values) n += double(v) * v;
    CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-6));
    for (std::size_t j = 1; j < 4; ++j)
      for (std::size_t k = 0; k < 3; ++k) CHECK(d.values[j * 3 + k] == doctest::Approx(d.values[k]).epsilon(1e-6));
  }
  SUBCASE("full-sized descriptor") {
    const ClusterParams p = random_params(rng, 64, 768, 128, 256, false);
    const PatchGrid g = random_grid(rng, 2, 2, 768);
    ClassToken cls;
    cls.values.assign(768, 0.5f);
    CHECK(aggregate_global(g, cls, assign_tokens(g, p), p).values.size() == 8448);
  }
  SUBCASE("cluster permutation permutes blocks") {
    ClusterParams p = random_params(rng, 3, 4, 2, 0, true);
    const PatchGrid g = random_grid(rng, 3, 1, 4);
    const auto d = aggregate_global(g, {}, assign_tokens(g, p), p);
    ClusterParams q = p;
    const std::size_t perm[3] = {2, 0, 1};
    for (std::size_t j = 0; j < 3; ++j) {
      for (std::size_t k = 0; k < 4; ++k) q.weights(j, k) = p.weights(perm[j], k);
      q.biases[j] = p.biases[perm[j]];
    }
    const auto e = aggregate_global(g, {}, assign_tokens(g, q), q);
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t k = 0; k < 2; ++k) CHECK(e.values[j * 2 + k] == doctest::Approx(d.values[perm[j] * 2 + k]).epsilon(1e-6));
  }
}

TEST_CASE("global_similarity") {
  std::mt19937_64 rng(5);
  const Array2f rows = oracle::random_unit_rows(rng, 3, 64);
  const GlobalDescriptor a{{rows.row(0).begin(), rows.row(0).end()}};
  const GlobalDescriptor b{{rows.row(1).begin(), rows.row(1).end()}};
  CHECK(global_similarity(a, a) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(global_similarity(a, b) == global_similarity(b, a));
  CHECK(std::abs(global_similarity(a, b) - double(oracle::dot_ld(a.values.data(), b.values.data(), 64))) < 1e-12);
  CHECK(global_similarity(GlobalDescriptor{{1, 0}}, GlobalDescriptor{{0, 1}}) == 0.0);
  CHECK_THROWS_AS(global_similarity(a, GlobalDescriptor{{1, 0}}), std::invalid_argument);
}
