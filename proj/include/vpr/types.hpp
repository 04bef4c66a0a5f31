#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vpr/array.hpp"

namespace vpr {

inline constexpr std::size_t kPatchSize = 14;
inline constexpr std::size_t kReliabilityStride = 8;
inline constexpr std::size_t kLocalDescriptorDim = 128;
inline constexpr std::size_t kDefaultLocalCap = 3500;
inline constexpr double kDefaultTopFraction = 0.40;

/// Tolerance applied when validating values that went through f32 storage.
inline constexpr double kStoredTolerance = 1e-5;

struct GridShape {
  std::size_t height = 0;
  std::size_t width = 0;

  [[nodiscard]] std::size_t count() const noexcept { return height * width; }
  bool operator==(const GridShape&) const = default;
};

/// Patch grid for an h x w image; dimensions are floor-divided by the patch size.
GridShape patch_grid_for_image(std::size_t image_h, std::size_t image_w);
/// Reliability-map grid for an h x w image (stride 8, floor-divided).
GridShape reliability_grid_for_image(std::size_t image_h, std::size_t image_w);

/// Backbone patch tokens, row-major [height * width][dim].
struct PatchGrid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t dim = 0;
  std::vector<float> tokens;

  [[nodiscard]] std::size_t count() const noexcept { return height * width; }
  [[nodiscard]] bool empty() const noexcept { return tokens.empty(); }
  [[nodiscard]] GridShape shape() const noexcept { return {height, width}; }
  [[nodiscard]] std::span<const float> token(std::size_t i) const noexcept {
    return {tokens.data() + i * dim, dim};
  }
  bool operator==(const PatchGrid&) const = default;
};

struct ClassToken {
  std::vector<float> values;
  bool operator==(const ClassToken&) const = default;
};

/// Learned aggregation parameters: per-cluster score weights and biases, the
/// dustbin score and the linear maps used to build the global descriptor.
struct ClusterParams {
  std::size_t clusters = 0;     // M
  std::size_t dim = 0;          // D
  std::size_t reduced_dim = 0;  // l
  std::size_t class_dim = 0;    // g
  Array2f weights;              // [M x D]
  std::vector<float> biases;    // [M]
  float dustbin_score = 1.0f;
  std::size_t sinkhorn_iters = 3;
  Array2f projection;        // [D x l], empty = identity truncation
  Array2f class_projection;  // [D x g], empty = identity truncation

  [[nodiscard]] std::size_t descriptor_length() const noexcept {
    return clusters * reduced_dim + class_dim;
  }
  void validate() const;
  bool operator==(const ClusterParams&) const = default;
};

/// Sinkhorn output. probs is [n x (M+1)] with the dustbin in the last column.
struct AssignmentResult {
  Array2d probs;
  std::vector<double> salience;
  Array2d mask_a;

  [[nodiscard]] std::size_t clusters() const noexcept { return probs.cols == 0 ? 0 : probs.cols - 1; }
  [[nodiscard]] std::size_t tokens() const noexcept { return probs.rows; }
  bool operator==(const AssignmentResult&) const = default;
};

/// Per-position match reliability in [0,1] on the H/8 x W/8 grid.
struct ReliabilityMap {
  Array2f values;
  bool operator==(const ReliabilityMap&) const = default;
};

struct DiscriminativeMask {
  Array2f values;                 // R (resampled) * M_a on the patch grid
  Array2<std::uint8_t> bin;       // top-fraction selection of values
  double top_fraction = kDefaultTopFraction;

  [[nodiscard]] bool empty() const noexcept { return values.empty(); }
  bool operator==(const DiscriminativeMask&) const = default;
};

struct GlobalDescriptor {
  std::vector<float> values;
  bool operator==(const GlobalDescriptor&) const = default;
};

struct GridPos {
  std::uint16_t row = 0;
  std::uint16_t col = 0;
  bool operator==(const GridPos&) const = default;
};

/// Local descriptors on the dense decoder grid, either the full grid in
/// row-major order (dense layout) or a masked subset.
struct LocalFeatureSet {
  std::size_t grid_height = 0;
  std::size_t grid_width = 0;
  std::vector<GridPos> positions;
  Array2f descriptors;  // [K x dim], rows unit-L2
  std::vector<float> reliability;

  [[nodiscard]] std::size_t size() const noexcept { return positions.size(); }
  [[nodiscard]] bool empty() const noexcept { return positions.empty(); }
  [[nodiscard]] std::size_t dim() const noexcept { return descriptors.cols; }
  /// True when every grid cell is present in row-major order.
  [[nodiscard]] bool is_dense() const noexcept;
  bool operator==(const LocalFeatureSet&) const = default;
};

struct Geotag {
  double lat = 0.0;
  double lon = 0.0;
  bool operator==(const Geotag&) const = default;
};

struct ImageRecord {
  std::string image_id;
  std::optional<Geotag> geotag;
  std::optional<std::int64_t> frame_index;
  GridShape patch_shape;
  std::size_t clusters = 0;     // M, kept in meta even without an assignment
  std::size_t reduced_dim = 0;  // l
  PatchGrid tokens;
  ClassToken class_token;
  std::optional<AssignmentResult> assignment;
  ReliabilityMap reliability;
  GlobalDescriptor global;
  LocalFeatureSet local;
  DiscriminativeMask mask;

  bool operator==(const ImageRecord&) const = default;
};

/// Number of selected cells for a top-fraction selection: ceil(fraction * n),
/// at least 1. A product within 1e-12 (relative) of an integer is taken as
/// that integer, so 0.4 of 10 selects 4 even though the double 0.4 is
/// slightly larger.
std::size_t selection_count(double fraction, std::size_t n);

/// Binary mask marking the selection_count(fraction, n) largest values; ties
/// go to the lower row-major index.
Array2<std::uint8_t> top_fraction_binary(const Array2f& values, double fraction);

/// Validate every invariant of a record. Throws DataError naming the field.
void validate_record(const ImageRecord& record, double tolerance = kStoredTolerance);

}  // namespace vpr
