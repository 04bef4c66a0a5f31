#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "vpr/region.hpp"
#include "vpr/resample.hpp"
#include "vpr/synth.hpp"

using namespace vpr;

namespace {

Array2d random_map(std::mt19937_64& rng, std::size_t h, std::size_t w, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Array2d m(h, w);
  for (auto& v : m.values) v = u(rng);
  return m;
}

LocalFeatureSet dense_grid(std::mt19937_64& rng, std::size_t h, std::size_t w, std::size_t dim) {
  LocalFeatureSet s;
  s.grid_height = h;
  s.grid_width = w;
  std::normal_distribution<float> g;
  s.descriptors = Array2f(h * w, dim);
  for (auto& v : s.descriptors.values) v = g(rng);
  for (std::size_t i = 0; i < h * w; ++i) {
    s.positions.push_back({static_cast<std::uint16_t>(i / w), static_cast<std::uint16_t>(i % w)});
    s.reliability.push_back(1.0f);
  }
  return s;
}

}  // namespace

TEST_CASE("resample_bilinear basics") {
  Array2d c(3, 5, 0.7);
  for (const double v : resample_bilinear(c, 11, 2).values) CHECK(v == 0.7);
  Array2d one(1, 1, -2.5);
  for (const double v : resample_bilinear(one, 4, 3).values) CHECK(v == -2.5);

  Array2d m(2, 2);
  m(0, 1) = 1.0;
  m(1, 1) = 1.0;
  const Array2d out = resample_bilinear(m, 2, 4);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t x = 0; x < 4; ++x) CHECK(out(r, x) == doctest::Approx(static_cast<double>(x) / 3.0).epsilon(1e-15));

  CHECK_THROWS_AS(resample_bilinear(m, 0, 3), std::invalid_argument);
  CHECK_THROWS_AS(resample_bilinear(Array2d{}, 2, 2), std::invalid_argument);
}

TEST_CASE("resample_bilinear matches the closed form and stays in range") {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<std::size_t> dim(1, 12);
  for (int t = 0; t < 300; ++t) {
    const Array2d m = random_map(rng, dim(rng), dim(rng), -3.0, 2.0);
    const std::size_t oh = dim(rng) * 2, ow = dim(rng) * 2;
    const Array2d out = resample_bilinear(m, oh, ow);
    const Array2d ref = oracle::bilinear(m, oh, ow);
    const double lo = *std::min_element(m.values.begin(), m.values.end());
    const double hi = *std::max_element(m.values.begin(), m.values.end());
    for (std::size_t i = 0; i < out.size(); ++i) {
      CHECK(std::abs(out.values[i] - ref.values[i]) < 1e-12);
      CHECK(out.values[i] >= lo);
      CHECK(out.values[i] <= hi);
    }
    // corners are preserved
    CHECK(out(0, 0) == m(0, 0));
    CHECK(out(oh - 1, ow - 1) == m(m.rows - 1, m.cols - 1));
  }
}

TEST_CASE("percentile_clip") {
  Array2d row(1, 10);
  for (std::size_t i = 0; i < 10; ++i) row.values[i] = static_cast<double>(i);
  const Array2d c = percentile_clip(row, 0.9);
  // h = 9 * 0.9 = 8.1 -> 8 + 0.1 * (9 - 8)
  CHECK(*std::max_element(c.values.begin(), c.values.end()) == doctest::Approx(8.1));
  for (std::size_t i = 0; i < 9; ++i) CHECK(c.values[i] == static_cast<double>(i));

  Array2d flat(2, 4, 0.3);
  CHECK(percentile_clip(flat, 0.5) == flat);
  // a second pass interpolates towards the clipped maximum: 8 + 0.1 * 0.1
  const Array2d again = percentile_clip(c, 0.9);
  CHECK(*std::max_element(again.values.begin(), again.values.end()) == doctest::Approx(8.01));
  // thresholds that land on an order statistic are stable
  CHECK(percentile_clip(percentile_clip(row, 1.0 / 9.0 * 8.0), 1.0 / 9.0 * 8.0) == percentile_clip(row, 1.0 / 9.0 * 8.0));

  std::mt19937_64 rng(9);
  for (int t = 0; t < 200; ++t) {
    const Array2d m = random_map(rng, 1 + t % 7, 1 + t % 11);
    for (const auto mode : {ClipMode::kRowWise, ClipMode::kGlobal}) {
      const Array2d once = percentile_clip(m, 0.9, mode);
      const Array2d twice = percentile_clip(once, 0.9, mode);
      for (std::size_t i = 0; i < m.size(); ++i) {
        CHECK(once.values[i] <= m.values[i]);
        CHECK(twice.values[i] <= once.values[i]);
      }
    }
    const Array2d once = percentile_clip(m, 0.75);
    for (std::size_t r = 0; r < m.rows; ++r) {
      const auto row_v = m.row(r);
      const double thr = oracle::quantile7({row_v.begin(), row_v.end()}, 0.75);
      for (std::size_t x = 0; x < m.cols; ++x) CHECK(once(r, x) == std::min(m(r, x), thr));
    }
  }
  CHECK_THROWS_AS(percentile_clip(flat, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(percentile_clip(flat, 0.0), std::invalid_argument);
}

TEST_CASE("selection_count is ceil of the decimal product") {
  CHECK(selection_count(0.4, 10) == 4);
  CHECK(selection_count(0.7, 10) == 7);  // 0.7 * 10 rounds to 7.000000000000001
  CHECK(selection_count(0.4, 529) == 212);
  CHECK(selection_count(1.0, 7) == 7);
  CHECK(selection_count(0.5, 1) == 1);
  CHECK(selection_count(1e-9, 10) == 1);
  std::mt19937_64 rng(1);
  for (int t = 0; t < 5000; ++t) {
    const std::size_t n = 1 + rng() % 4000;
    const std::uint64_t den = 1 + rng() % 1000;
    const std::uint64_t num = 1 + rng() % den;
    CHECK(selection_count(static_cast<double>(num) / static_cast<double>(den), n) == oracle::ceil_ratio(num, den, n));
  }
}

TEST_CASE("binarize_mask selects the top fraction with row-major ties") {
  DiscriminativeMask m;
  m.values = Array2f(2, 5, 0.5f);
  CHECK(binarize_mask(m, 0.4).bin.values == std::vector<std::uint8_t>{1, 1, 1, 1, 0, 0, 0, 0, 0, 0});
  CHECK(binarize_mask(m, 1.0).bin.values == std::vector<std::uint8_t>(10, 1));
  for (std::size_t i = 0; i < 10; ++i) m.values.values[i] = static_cast<float>((i * 7) % 10);
  const auto b = binarize_mask(m, 0.4).bin.values;
  for (std::size_t i = 0; i < 10; ++i) CHECK((b[i] == 1) == (m.values.values[i] >= 6.0f));

  std::mt19937_64 rng(2);
  for (int t = 0; t < 500; ++t) {
    const std::size_t h = 1 + rng() % 9, w = 1 + rng() % 9;
    Array2f v(h, w);
    for (auto& x : v.values) x = static_cast<float>(rng() % 4) * 0.25f;  // many ties
    const std::uint64_t den = 1 + rng() % 100;
    const std::uint64_t num = 1 + rng() % den;
    const auto bin = top_fraction_binary(v, static_cast<double>(num) / static_cast<double>(den));
    CHECK(bin.values == oracle::top_k(v.values, oracle::ceil_ratio(num, den, h * w)));
  }
}

TEST_CASE("fuse_mask") {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 50; ++t) {
    const Array2d ma = random_map(rng, 8, 8);
    ReliabilityMap ones{Array2f(3, 5, 1.0f)};
    const auto m = fuse_mask(ones, ma);
    for (std::size_t i = 0; i < ma.size(); ++i) CHECK(std::abs(m.values.values[i] - ma.values[i]) < 1e-6);

    ReliabilityMap r;
    r.values = cast_array<float>(random_map(rng, 4, 4));
    const auto fused = fuse_mask(r, ma, 0.4);
    const Array2d rs = oracle::bilinear(cast_array<double>(r.values), 8, 8);
    for (std::size_t i = 0; i < ma.size(); ++i) {
      CHECK(std::abs(fused.values.values[i] - rs.values[i] * ma.values[i]) < 1e-6);
      CHECK(fused.values.values[i] >= 0.0f);
      CHECK(fused.values.values[i] <= 1.0f);
    }
    std::size_t on = 0;
    for (const auto b : fused.bin.values) on += b;
    CHECK(on == 26);  // ceil(0.4 * 64)

    const auto zero = fuse_mask(r, Array2d(8, 8, 0.0));
    for (const float v : zero.values.values) CHECK(v == 0.0f);
  }
  CHECK_THROWS_AS(fuse_mask(ReliabilityMap{}, Array2d(2, 2, 0.5)), std::invalid_argument);
}

TEST_CASE("select_local") {
  std::mt19937_64 rng(8);
  const LocalFeatureSet dense = dense_grid(rng, 8, 12, 16);
  DiscriminativeMask m;
  m.values = cast_array<float>(random_map(rng, 2, 3));
  ReliabilityMap r{cast_array<float>(random_map(rng, 3, 3))};

  SUBCASE("all cells") {
    const auto all = binarize_mask(m, 1.0);
    const auto s = select_local(dense, all, r, 1000);
    CHECK(s.size() == 96);
    CHECK(s.positions == dense.positions);
    for (std::size_t k = 0; k < s.size(); ++k) {
      double n = 0;
      for (const float v : s.descriptors.row(k)) n += double(v) * v;
      CHECK(std::abs(std::sqrt(n) - 1.0) < 1e-6);
    }
    const Array2d rs = oracle::bilinear(cast_array<double>(r.values), 8, 12);
    for (std::size_t k = 0; k < s.size(); ++k) CHECK(std::abs(s.reliability[k] - rs.values[k]) < 1e-6);
  }
  SUBCASE("none selected") {
    DiscriminativeMask none = m;
    none.bin = Array2<std::uint8_t>(2, 3, 0);
    CHECK(select_local(dense, none, r).empty());
  }
  SUBCASE("block replication and cap") {
    const auto half = binarize_mask(m, 0.5);  // 3 of 6 cells -> 3 * 16 dense cells
    const auto s = select_local(dense, half, r, 1000);
    CHECK(s.size() == 48);
    for (const auto& p : s.positions) CHECK(half.bin(p.row / 4, p.col / 4) == 1);
    const auto capped = select_local(dense, half, r, 20);
    CHECK(capped.size() == 20);
    // the cap keeps the highest mask cells first
    std::vector<std::pair<float, std::size_t>> kept;
    for (const auto& p : s.positions) kept.emplace_back(-m.values(p.row / 4, p.col / 4), p.row * 12u + p.col);
    std::sort(kept.begin(), kept.end());
    std::vector<std::size_t> expect;
    for (std::size_t i = 0; i < 20; ++i) expect.push_back(kept[i].second);
    std::sort(expect.begin(), expect.end());
    for (std::size_t i = 0; i < 20; ++i) CHECK(capped.positions[i].row * 12u + capped.positions[i].col == expect[i]);
  }
  SUBCASE("monotone in the mask") {
    const auto small = select_local(dense, binarize_mask(m, 0.3), r, 1000);
    const auto big = select_local(dense, binarize_mask(m, 0.7), r, 1000);
    for (const auto& p : small.positions) CHECK(std::find(big.positions.begin(), big.positions.end(), p) != big.positions.end());
  }
  SUBCASE("grid multiples") {
    const LocalFeatureSet odd = dense_grid(rng, 7, 12, 4);
    CHECK_THROWS_AS(select_local(odd, binarize_mask(m, 0.5), r), std::invalid_argument);
  }
}

TEST_CASE("select_local on a 92x92 grid with a 23x23 mask at 40 percent") {
  std::mt19937_64 rng(23);
  DiscriminativeMask m;
  m.values = cast_array<float>(random_map(rng, 23, 23));
  m = binarize_mask(m, 0.4);
  LocalFeatureSet dense;
  dense.grid_height = dense.grid_width = 92;
  dense.descriptors = Array2f(92 * 92, 2, 1.0f);
  for (std::size_t i = 0; i < 92 * 92; ++i) {
    dense.positions.push_back({static_cast<std::uint16_t>(i / 92), static_cast<std::uint16_t>(i % 92)});
    dense.reliability.push_back(1.0f);
  }
  // 212 patch cells of 16 dense cells each
  CHECK(oracle::ceil_ratio(4, 10, 529) * 16 == 3392);
  CHECK(select_local(dense, m, {}, 3500).size() == 3392);
  CHECK(select_local(dense, m, {}, 3000).size() == 3000);
}
