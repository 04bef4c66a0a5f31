#include "vpr/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

#include "vpr/region.hpp"

namespace vpr {

namespace {

constexpr double kEarthRadius = 6371000.0;

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t tag, std::uint64_t index = 0) {
  return std::mt19937_64(splitmix(splitmix(splitmix(seed) ^ tag) ^ index));
}

using Rng = std::mt19937_64;

void normalize_into(std::span<const double> v, std::span<float> out) {
  double n = 0.0;
  for (const double x : v) n += x * x;
  n = std::sqrt(n);
  if (!(n > 0.0)) throw std::runtime_error("synth: zero vector");
  for (std::size_t k = 0; k < v.size(); ++k) out[k] = static_cast<float>(v[k] / n);
}

std::vector<double> gaussian(Rng& rng, std::size_t dim) {
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<double> v(dim);
  for (double& x : v) x = nd(rng);
  return v;
}

void unit_into(Rng& rng, std::span<float> out) { normalize_into(gaussian(rng, out.size()), out); }

// normalize(base + sigma * noise) with noise ~ N(0, I).
void noisy_into(Rng& rng, std::span<const float> base, double sigma, std::span<float> out) {
  std::vector<double> v(base.begin(), base.end());
  if (sigma > 0.0) {
    std::normal_distribution<double> nd(0.0, sigma);
    for (double& x : v) x += nd(rng);
  }
  normalize_into(v, out);
}

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

std::vector<double> soft_row(std::size_t cluster, std::size_t columns, double hard) {
  std::vector<double> row(columns, (1.0 - hard) / static_cast<double>(columns - 1));
  row[cluster] = hard;
  return row;
}

AssignmentResult assignment_from_rows(const std::vector<std::vector<double>>& rows, GridShape grid) {
  AssignmentResult a;
  a.probs = Array2d(rows.size(), rows.front().size());
  a.salience.resize(rows.size());
  a.mask_a = Array2d(grid.height, grid.width);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy(rows[i].begin(), rows[i].end(), a.probs.row(i).begin());
    a.salience[i] = 1.0 - rows[i].back();
    a.mask_a.values[i] = a.salience[i];
  }
  return a;
}

ReliabilityMap random_reliability(Rng& rng, GridShape patch_grid, double lo, double hi) {
  const GridShape g = reliability_grid_for_image(patch_grid.height * kPatchSize, patch_grid.width * kPatchSize);
  ReliabilityMap r;
  r.values = Array2f(g.height, g.width);
  for (float& v : r.values.values) v = static_cast<float>(uniform(rng, lo, hi));
  return r;
}

LocalFeatureSet dense_grid(std::size_t h, std::size_t w, std::size_t dim) {
  LocalFeatureSet s;
  s.grid_height = h;
  s.grid_width = w;
  s.positions.reserve(h * w);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) s.positions.push_back({static_cast<std::uint16_t>(r), static_cast<std::uint16_t>(c)});
  s.descriptors = Array2f(h * w, dim);
  s.reliability.assign(h * w, 1.0f);
  return s;
}

std::vector<GridPos> random_positions(Rng& rng, std::size_t count, GridShape grid) {
  if (count > grid.count()) throw std::invalid_argument("synth: more local features than grid cells");
  std::vector<std::size_t> cells(grid.count());
  std::iota(cells.begin(), cells.end(), std::size_t{0});
  std::shuffle(cells.begin(), cells.end(), rng);
  cells.resize(count);
  std::sort(cells.begin(), cells.end());
  std::vector<GridPos> out;
  out.reserve(count);
  for (const std::size_t c : cells)
    out.push_back({static_cast<std::uint16_t>(c / grid.width), static_cast<std::uint16_t>(c % grid.width)});
  return out;
}

}  // namespace

double metres_to_lat_deg(double metres) { return metres / (kEarthRadius * std::numbers::pi / 180.0); }

double metres_to_lon_deg(double metres, double lat_deg) {
  return metres_to_lat_deg(metres) / std::cos(lat_deg * std::numbers::pi / 180.0);
}

LocalFeatureSet random_local_features(std::uint64_t seed, std::size_t count, std::size_t dim, GridShape grid) {
  Rng rng = stream(seed, 0x10ca1);
  LocalFeatureSet s;
  s.grid_height = grid.height;
  s.grid_width = grid.width;
  s.positions = random_positions(rng, count, grid);
  s.descriptors = Array2f(count, dim);
  for (std::size_t k = 0; k < count; ++k) unit_into(rng, s.descriptors.row(k));
  s.reliability.resize(count);
  for (float& r : s.reliability) r = static_cast<float>(uniform(rng, 0.0, 1.0));
  return s;
}

ClusterScene gen_cluster_scene(const SceneParams& p) {
  const std::size_t n = p.grid.count();
  if (n == 0) throw std::invalid_argument("gen_cluster_scene: degenerate grid");
  if (p.clusters == 0 || p.dim == 0 || p.local_dim == 0 || p.dense_scale == 0)
    throw std::invalid_argument("gen_cluster_scene: clusters, dims and scale must be >= 1");
  if (!(p.noise_sigma >= 0.0)) throw std::invalid_argument("gen_cluster_scene: negative noise");

  Rng rng = stream(p.seed, 0x5ce2e);
  const std::size_t cols = p.clusters + 1;

  std::vector<std::size_t> cluster(n);
  std::vector<double> hard(n);
  for (std::size_t i = 0; i < n; ++i) {
    cluster[i] = uniform(rng, 0.0, 1.0) < p.dustbin_fraction
                     ? p.clusters
                     : std::uniform_int_distribution<std::size_t>(0, p.clusters - 1)(rng);
    hard[i] = uniform(rng, 0.55, 0.95);
  }
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_planted = static_cast<std::size_t>(std::llround(p.planted_fraction * static_cast<double>(n)));
  std::vector<bool> planted(n, false);
  for (std::size_t k = 0; k < std::min(n_planted, n); ++k) planted[order[k]] = true;

  ClusterScene scene;
  const auto init = [&](ImageRecord& r, const std::string& id) {
    r.image_id = id;
    r.patch_shape = p.grid;
    r.clusters = p.clusters;
    r.tokens = {p.grid.height, p.grid.width, p.dim, std::vector<float>(n * p.dim)};
    r.class_token.values.resize(p.dim);
    unit_into(rng, r.class_token.values);
    r.local = dense_grid(p.grid.height * p.dense_scale, p.grid.width * p.dense_scale, p.local_dim);
  };
  ImageRecord& a = scene.anchor;
  ImageRecord& b = scene.positive;
  init(a, "scene" + std::to_string(p.seed) + "_anchor");
  init(b, "scene" + std::to_string(p.seed) + "_positive");

  const auto token_span = [&](ImageRecord& r, std::size_t i) { return std::span<float>(r.tokens.tokens.data() + i * p.dim, p.dim); };
  std::vector<std::vector<double>> rows_a(n), rows_b(n);
  for (std::size_t i = 0; i < n; ++i) {
    unit_into(rng, token_span(a, i));
    rows_a[i] = soft_row(cluster[i], cols, hard[i]);
    const std::size_t j = perm[i];
    if (planted[i]) {
      noisy_into(rng, token_span(a, i), p.noise_sigma, token_span(b, j));
      rows_b[j] = rows_a[i];
      scene.planted.emplace_back(i, j);
    } else {
      unit_into(rng, token_span(b, j));
      const std::size_t c = uniform(rng, 0.0, 1.0) < p.dustbin_fraction
                                ? p.clusters
                                : std::uniform_int_distribution<std::size_t>(0, p.clusters - 1)(rng);
      rows_b[j] = soft_row(c, cols, uniform(rng, 0.55, 0.95));
    }
  }

  // Dense local grids: a planted partner's block repeats the anchor block.
  const std::size_t s = p.dense_scale;
  const std::size_t dw = p.grid.width * s;
  for (std::size_t k = 0; k < a.local.size(); ++k) unit_into(rng, a.local.descriptors.row(k));
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = perm[i];
    for (std::size_t dy = 0; dy < s; ++dy)
      for (std::size_t dx = 0; dx < s; ++dx) {
        const std::size_t ca = ((i / p.grid.width) * s + dy) * dw + (i % p.grid.width) * s + dx;
        const std::size_t cb = ((j / p.grid.width) * s + dy) * dw + (j % p.grid.width) * s + dx;
        if (planted[i])
          noisy_into(rng, a.local.descriptors.row(ca), p.noise_sigma, b.local.descriptors.row(cb));
        else
          unit_into(rng, b.local.descriptors.row(cb));
      }
  }

  for (auto* r : {&a, &b}) {
    const auto& rows = r == &a ? rows_a : rows_b;
    r->assignment = assignment_from_rows(rows, p.grid);
    r->reliability = random_reliability(rng, p.grid, 0.2, 1.0);
    r->mask = fuse_mask(r->reliability, r->assignment->mask_a, p.top_fraction);
    for (float& v : r->local.reliability) v = static_cast<float>(uniform(rng, 0.0, 1.0));
  }
  return scene;
}

GeoDataset gen_geo_index(const GeoParams& p) {
  if (p.size == 0) throw std::invalid_argument("gen_geo_index: size must be >= 1");
  if (p.images_per_place == 0 || p.global_dim == 0 || p.local_dim == 0)
    throw std::invalid_argument("gen_geo_index: images_per_place and dims must be >= 1");
  const std::size_t places = (p.size + p.images_per_place - 1) / p.images_per_place;
  const auto side = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(places))));

  // Place prototypes.
  std::vector<std::vector<float>> proto(places, std::vector<float>(p.global_dim));
  std::vector<Array2f> landmarks(places, Array2f(p.landmarks, p.local_dim));
  for (std::size_t k = 0; k < places; ++k) {
    Rng rng = stream(p.seed, 0x91ace, k);
    unit_into(rng, proto[k]);
    for (std::size_t l = 0; l < p.landmarks; ++l) unit_into(rng, landmarks[k].row(l));
  }

  const double gsigma = p.global_noise / std::sqrt(static_cast<double>(p.global_dim));
  const double lsigma = p.local_noise / std::sqrt(static_cast<double>(p.local_dim));
  const auto make_image = [&](std::size_t place, std::uint64_t tag, std::size_t idx, const std::string& id) {
    Rng rng = stream(p.seed, tag, idx);
    ImageRecord r;
    r.image_id = id;
    const double north = static_cast<double>(place / side) * p.place_spacing_m;
    const double east = static_cast<double>(place % side) * p.place_spacing_m;
    const double rad = p.cluster_spread_m * std::sqrt(uniform(rng, 0.0, 1.0));
    const double ang = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    const double lat = p.origin_lat + metres_to_lat_deg(north + rad * std::cos(ang));
    r.geotag = Geotag{lat, p.origin_lon + metres_to_lon_deg(east + rad * std::sin(ang), p.origin_lat)};

    r.global.values.resize(p.global_dim);
    noisy_into(rng, proto[place], gsigma, r.global.values);

    const bool dense = p.dense_patch_grid.count() > 0;
    const std::size_t count = dense ? p.local_grid.count() : p.landmarks + p.distractors;
    if (p.landmarks > count) throw std::invalid_argument("gen_geo_index: more landmarks than local features");
    if (dense) {
      r.local = dense_grid(p.local_grid.height, p.local_grid.width, p.local_dim);
    } else {
      r.local.grid_height = p.local_grid.height;
      r.local.grid_width = p.local_grid.width;
      r.local.positions = random_positions(rng, count, p.local_grid);
      r.local.descriptors = Array2f(count, p.local_dim);
      r.local.reliability.resize(count);
    }
    std::vector<std::size_t> slot(count);
    std::iota(slot.begin(), slot.end(), std::size_t{0});
    std::shuffle(slot.begin(), slot.end(), rng);
    for (std::size_t f = 0; f < count; ++f) {
      const std::size_t k = slot[f];
      if (f < p.landmarks) {
        noisy_into(rng, landmarks[place].row(f), lsigma, r.local.descriptors.row(k));
        r.local.reliability[k] = static_cast<float>(uniform(rng, 0.7, 1.0));
      } else {
        unit_into(rng, r.local.descriptors.row(k));
        r.local.reliability[k] = static_cast<float>(uniform(rng, 0.0, 0.3));
      }
    }
    if (dense) {
      const GridShape pg = p.dense_patch_grid;
      if (p.local_grid.height % pg.height != 0 || p.local_grid.width % pg.width != 0)
        throw std::invalid_argument("gen_geo_index: local grid is not a multiple of the patch grid");
      const std::size_t sy = p.local_grid.height / pg.height;
      const std::size_t sx = p.local_grid.width / pg.width;
      std::vector<double> sal(pg.count());
      for (double& v : sal) v = uniform(rng, 0.05, 0.5);
      for (std::size_t f = 0; f < p.landmarks; ++f) {
        const std::size_t k = slot[f];
        const std::size_t cell = (k / p.local_grid.width / sy) * pg.width + (k % p.local_grid.width) / sx;
        sal[cell] = std::max(sal[cell], uniform(rng, 0.8, 1.0));
      }
      std::vector<std::vector<double>> rows(pg.count());
      for (std::size_t i = 0; i < pg.count(); ++i) rows[i] = {sal[i], 1.0 - sal[i]};
      r.patch_shape = pg;
      r.clusters = 1;
      r.assignment = assignment_from_rows(rows, pg);
      r.reliability = random_reliability(rng, pg, 0.6, 1.0);
      r.mask = fuse_mask(r.reliability, r.assignment->mask_a, kDefaultTopFraction);
    }
    return r;
  };

  GeoDataset out;
  out.database.reserve(p.size);
  char id[32];
  for (std::size_t i = 0; i < p.size; ++i) {
    std::snprintf(id, sizeof id, "db%05zu", i);
    out.database.push_back(make_image(i / p.images_per_place, 0xdb, i, id));
  }
  out.queries.reserve(p.queries);
  for (std::size_t q = 0; q < p.queries; ++q) {
    std::snprintf(id, sizeof id, "q%05zu", q);
    const std::size_t place = p.queries >= places ? q % places : q * places / p.queries;
    out.queries.push_back(make_image(place, 0x9e, q, id));
  }
  return out;
}

PlantedRerankCase gen_planted_rerank(std::uint64_t seed, std::size_t size, std::size_t local_features) {
  if (size < 3) throw std::invalid_argument("gen_planted_rerank: need at least 3 database images");
  constexpr std::size_t kDim = 64;
  const GridShape grid{32, 32};
  Rng rng = stream(seed, 0x71a27);

  std::vector<double> q = gaussian(rng, kDim);
  double qn = 0.0;
  for (const double x : q) qn += x * x;
  for (double& x : q) x /= std::sqrt(qn);

  // Unit vector at cosine c from q, direction otherwise random.
  const auto at_cosine = [&](double c) {
    std::vector<double> w = gaussian(rng, kDim);
    double d = 0.0;
    for (std::size_t k = 0; k < kDim; ++k) d += w[k] * q[k];
    double wn = 0.0;
    for (std::size_t k = 0; k < kDim; ++k) {
      w[k] -= d * q[k];
      wn += w[k] * w[k];
    }
    wn = std::sqrt(wn);
    std::vector<double> v(kDim);
    for (std::size_t k = 0; k < kDim; ++k) v[k] = c * q[k] + std::sqrt(1.0 - c * c) * w[k] / wn;
    GlobalDescriptor g;
    g.values.resize(kDim);
    normalize_into(v, g.values);
    return g;
  };

  PlantedRerankCase out;
  ImageRecord& query = out.query;
  query.image_id = "query";
  query.geotag = Geotag{45.0, 7.0};
  query.global.values.resize(kDim);
  normalize_into(q, query.global.values);
  query.local = random_local_features(splitmix(seed ^ 0x1), local_features, kLocalDescriptorDim, grid);
  for (float& r : query.local.reliability) r = static_cast<float>(uniform(rng, 0.9, 1.0));

  char id[32];
  for (std::size_t i = 0; i < size; ++i) {
    ImageRecord r;
    std::snprintf(id, sizeof id, "db%05zu", i);
    r.image_id = id;
    double c = 0.0;
    if (i == 0) c = 0.95;
    else if (i == 1) c = 0.945;
    else if (i == 2) c = 0.94;
    else c = uniform(rng, -0.3, 0.8);
    r.global = at_cosine(c);
    if (i == 2) {
      r.geotag = query.geotag;
      r.local = query.local;
      for (std::size_t k = 0; k < r.local.size(); ++k) {
        const std::vector<float> base(r.local.descriptors.row(k).begin(), r.local.descriptors.row(k).end());
        noisy_into(rng, base, 0.02, r.local.descriptors.row(k));
        r.local.reliability[k] = static_cast<float>(uniform(rng, 0.8, 1.0));
      }
    } else {
      const double north = 200.0 + 150.0 * static_cast<double>(i);
      r.geotag = Geotag{45.0 + metres_to_lat_deg(north), 7.0};
      r.local = random_local_features(splitmix(seed ^ (0x100 + i)), local_features, kLocalDescriptorDim, grid);
      for (float& v : r.local.reliability) v *= 0.5f;
    }
    out.database.push_back(std::move(r));
  }
  out.true_id = out.database[2].image_id;

  std::size_t rank = 1;
  const auto score = [&](const ImageRecord& r) {
    double s = 0.0;
    for (std::size_t k = 0; k < kDim; ++k) s += static_cast<double>(r.global.values[k]) * query.global.values[k];
    return s;
  };
  const double st = score(out.database[2]);
  for (std::size_t i = 0; i < size; ++i)
    if (i != 2 && score(out.database[i]) > st) ++rank;
  out.true_global_rank = rank;
  return out;
}

}  // namespace vpr
