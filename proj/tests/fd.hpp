#pragma once

// Central finite differences and random instances for the loss gradient
// checks, shared by the unit tests and the acceptance suite.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

#include "vpr/array.hpp"
#include "vpr/losses.hpp"

namespace fd {

inline constexpr double kStep = 1e-4;

// max |analytic - numeric| / max(max |numeric|, max |analytic|), a relative
// error over the whole gradient so near-zero components do not dominate.
inline double rel_error(const std::vector<double>& analytic, const std::vector<double>& numeric) {
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
    scale = std::max({scale, std::abs(numeric[i]), std::abs(analytic[i])});
  }
  return scale > 0.0 ? diff / scale : diff;
}

inline std::vector<double> gradient(std::vector<double> x, const std::function<double(const std::vector<double>&)>& f,
                                    double h = kStep) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

// Positive map whose row entries are a shuffled ladder with gaps of at least
// 0.05, so no perturbation of size kStep reorders a row or crosses the clip
// threshold.
inline vpr::Array2d ladder_map(std::mt19937_64& rng, std::size_t h, std::size_t w) {
  std::uniform_real_distribution<double> jitter(0.0, 0.05);
  vpr::Array2d m(h, w);
  std::vector<std::size_t> perm(w);
  for (std::size_t r = 0; r < h; ++r) {
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t c = 0; c < w; ++c) m(r, c) = 0.1 + 0.1 * static_cast<double>(perm[c]) + jitter(rng);
  }
  return m;
}

inline vpr::Array2d gaussian(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
  std::normal_distribution<double> n;
  vpr::Array2d a(rows, cols);
  for (auto& v : a.values) v = n(rng);
  return a;
}

inline vpr::Array2d unit_rows(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
  vpr::Array2d a = gaussian(rng, rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    double n = 0;
    for (const double v : a.row(r)) n += v * v;
    for (double& v : a.row(r)) v /= std::sqrt(n);
  }
  return a;
}

inline vpr::Array2d with(const vpr::Array2d& like, const std::vector<double>& values) {
  vpr::Array2d a = like;
  a.values = values;
  return a;
}

// Worst relative error of the L_SA gradients on one random 8x8 instance.
inline double check_sa(std::mt19937_64& rng) {
  const vpr::Array2d ma = ladder_map(rng, 8, 8);
  const vpr::Array2d r = ladder_map(rng, 8, 8);
  const auto res = vpr::loss_sa(ma, r);
  const auto ga = gradient(ma.values, [&](const std::vector<double>& x) { return vpr::loss_sa(with(ma, x), r).value; });
  const auto gr = gradient(r.values, [&](const std::vector<double>& x) { return vpr::loss_sa(ma, with(r, x)).value; });
  return std::max(rel_error(res.grad_m_a.values, ga), rel_error(res.grad_r.values, gr));
}

// L_SCE as a function of the two 8x8 masks. Instances whose hinge is within
// 0.05 of its kink are redrawn.
inline double check_sce(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.1, 0.9);
  for (;;) {
    const vpr::Array2d fa = gaussian(rng, 64, 16);
    const vpr::Array2d fp = gaussian(rng, 64, 16);
    vpr::Array2d ma(8, 8), mp(8, 8);
    for (auto& v : ma.values) v = u(rng);
    for (auto& v : mp.values) v = u(rng);
    const auto res = vpr::loss_sce_masks(fa, ma, fp, mp);
    if (res.value < 0.05) continue;
    const auto ga = gradient(ma.values, [&](const std::vector<double>& x) { return vpr::loss_sce_masks(fa, with(ma, x), fp, mp).value; });
    const auto gp = gradient(mp.values, [&](const std::vector<double>& x) { return vpr::loss_sce_masks(fa, ma, fp, with(mp, x)).value; });
    return std::max(rel_error(res.grad_mask.values, ga), rel_error(res.grad_positive_mask.values, gp));
  }
}

// L_PC on 16 pairs of 128-d unit descriptors.
inline double check_pc(std::mt19937_64& rng) {
  const vpr::Array2d a = unit_rows(rng, 16, 128);
  const vpr::Array2d p = unit_rows(rng, 16, 128);
  std::uniform_real_distribution<double> s(0.5, 1.0);
  std::vector<double> sims(16);
  for (auto& v : sims) v = s(rng);
  const auto res = vpr::loss_pc(a, p, sims);
  const auto ga = gradient(a.values, [&](const std::vector<double>& x) { return vpr::loss_pc(with(a, x), p, sims).value; });
  const auto gp = gradient(p.values, [&](const std::vector<double>& x) { return vpr::loss_pc(a, with(p, x), sims).value; });
  return std::max(rel_error(res.grad_anchor.values, ga), rel_error(res.grad_positive.values, gp));
}

}  // namespace fd
