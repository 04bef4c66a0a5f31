#pragma once

// Deterministic synthetic data. Every generator is a pure function of its
// parameters (seed included).

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vpr/types.hpp"

namespace vpr {

struct SceneParams {
  std::uint64_t seed = 0;
  std::size_t clusters = 8;
  GridShape grid{8, 8};
  double noise_sigma = 0.0;
  std::size_t dim = 64;             // token width
  std::size_t dense_scale = 2;      // dense local grid per patch, per axis
  std::size_t local_dim = kLocalDescriptorDim;
  double planted_fraction = 0.75;   // share of anchor patches with a partner
  double dustbin_fraction = 0.1;    // share of tokens whose argmax is the dustbin
  double top_fraction = kDefaultTopFraction;
};

struct ClusterScene {
  ImageRecord anchor;
  ImageRecord positive;
  std::vector<std::pair<std::size_t, std::size_t>> planted;  // (anchor patch, positive patch)
};

/// Two records that share per-element prototypes. A planted anchor patch and
/// its partner carry the same prototype (the partner with added noise and
/// re-normalization) and the same soft assignment row; all other tokens are
/// independent. Dense local grids are filled the same way.
ClusterScene gen_cluster_scene(const SceneParams& params);

struct GeoParams {
  std::uint64_t seed = 0;
  std::size_t size = 1000;          // database images
  std::size_t queries = 100;
  double cluster_spread_m = 5.0;    // jitter of images around their place
  double place_spacing_m = 100.0;
  std::size_t images_per_place = 4;
  std::size_t global_dim = 64;
  double global_noise = 0.15;       // per-coordinate sigma before re-normalization (scaled by 1/sqrt(dim))
  std::size_t landmarks = 32;       // shared local features per place
  std::size_t distractors = 16;     // image-specific local features
  std::size_t local_dim = kLocalDescriptorDim;
  double local_noise = 0.2;
  GridShape local_grid{32, 32};
  /// When non-empty, records carry the full dense local grid (local_grid)
  /// plus an assignment and fused mask on this patch grid; patches holding
  /// landmarks get high salience. local_grid must be a multiple of it.
  GridShape dense_patch_grid{0, 0};
  double origin_lat = 45.0;
  double origin_lon = 7.0;
};

struct GeoDataset {
  std::vector<ImageRecord> database;
  std::vector<ImageRecord> queries;
};

/// Places on a square lattice with spacing place_spacing_m; each image sits
/// within cluster_spread_m of its place. Images of one place share a global
/// prototype and a set of landmark local features (high reliability); the
/// rest of each image's local features are private distractors.
GeoDataset gen_geo_index(const GeoParams& params);

struct PlantedRerankCase {
  std::vector<ImageRecord> database;
  ImageRecord query;
  std::string true_id;
  std::size_t true_global_rank = 0;  // 1-based rank by global score
};

/// A database of `size` images where the true match ranks third by global
/// score but shares many reliable local features with the query, while the
/// two images above it share none.
PlantedRerankCase gen_planted_rerank(std::uint64_t seed, std::size_t size = 200, std::size_t local_features = 64);

/// Random unit-L2 local features on a grid (distinct positions, row-major).
LocalFeatureSet random_local_features(std::uint64_t seed, std::size_t count, std::size_t dim, GridShape grid);

/// Metres to degrees at a latitude, spherical earth of radius 6371000 m.
double metres_to_lat_deg(double metres);
double metres_to_lon_deg(double metres, double lat_deg);

}  // namespace vpr
