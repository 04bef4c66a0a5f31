#include "vpr/types.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "vpr/errors.hpp"
#include "vpr/resample.hpp"

namespace vpr {

namespace {

[[noreturn]] void violation(const std::string& field, const std::string& detail) {
  throw DataError(field, "invariant violation in " + field + ": " + detail);
}

template <typename Range>
void require_finite(const Range& values, const std::string& field) {
  for (const auto v : values)
    if (!std::isfinite(static_cast<double>(v))) violation(field, "non-finite value");
}

template <typename Range>
void require_unit_interval(const Range& values, const std::string& field, double tol) {
  for (const auto v : values) {
    const double d = static_cast<double>(v);
    if (!std::isfinite(d)) violation(field, "non-finite value");
    if (d < -tol || d > 1.0 + tol) {
      std::ostringstream os;
      os << "value " << d << " outside [0,1]";
      violation(field, os.str());
    }
  }
}

template <typename Range>
double l2_norm(const Range& values) {
  double s = 0.0;
  for (const auto v : values) s += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(s);
}

}  // namespace

GridShape patch_grid_for_image(std::size_t image_h, std::size_t image_w) {
  return {image_h / kPatchSize, image_w / kPatchSize};
}

GridShape reliability_grid_for_image(std::size_t image_h, std::size_t image_w) {
  return {image_h / kReliabilityStride, image_w / kReliabilityStride};
}

bool LocalFeatureSet::is_dense() const noexcept {
  if (positions.size() != grid_height * grid_width) return false;
  for (std::size_t i = 0; i < positions.size(); ++i) {
    if (positions[i].row != i / grid_width || positions[i].col != i % grid_width) return false;
  }
  return true;
}

void ClusterParams::validate() const {
  if (clusters < 1) violation("clusters", "M must be >= 1");
  if (sinkhorn_iters < 1) violation("sinkhorn_iters", "must be >= 1");
  if (reduced_dim < 1) violation("reduced_dim", "l must be >= 1");
  if (dim < 1) violation("dim", "D must be >= 1");
  if (weights.rows != clusters || weights.cols != dim) violation("weights", "expected M x D");
  if (biases.size() != clusters) violation("biases", "expected M entries");
  if (!projection.empty() && (projection.rows != dim || projection.cols != reduced_dim))
    violation("projection", "expected D x l");
  if (!class_projection.empty() && (class_projection.rows != dim || class_projection.cols != class_dim))
    violation("class_projection", "expected D x g");
  require_finite(weights.values, "weights");
  require_finite(biases, "biases");
  require_finite(projection.values, "projection");
  require_finite(class_projection.values, "class_projection");
  if (!std::isfinite(dustbin_score)) violation("dustbin_score", "non-finite value");
}

std::size_t selection_count(double fraction, std::size_t n) {
  if (n == 0) return 0;
  if (!(fraction > 0.0)) return 0;
  if (fraction >= 1.0) return n;
  // Fractions are read as the decimal they were written as: a product that
  // lands within rounding of an integer counts as that integer.
  const double product = fraction * static_cast<double>(n);
  const double nearest = std::round(product);
  const double k = std::abs(product - nearest) <= 1e-12 * std::max(1.0, product) ? nearest : std::ceil(product);
  return std::min(std::max<std::size_t>(static_cast<std::size_t>(k), 1), n);
}

Array2<std::uint8_t> top_fraction_binary(const Array2f& values, double fraction) {
  Array2<std::uint8_t> bin(values.rows, values.cols, 0);
  const std::size_t n = values.size();
  const std::size_t k = selection_count(fraction, n);
  if (k == 0) return bin;
  if (k == n) {
    std::fill(bin.values.begin(), bin.values.end(), std::uint8_t{1});
    return bin;
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto before = [&](std::size_t a, std::size_t b) {
    const float va = values.values[a];
    const float vb = values.values[b];
    return va != vb ? va > vb : a < b;
  };
  std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k - 1), order.end(), before);
  const std::size_t pivot = order[k - 1];
  for (std::size_t i = 0; i < n; ++i)
    if (i == pivot || before(i, pivot)) bin.values[i] = 1;
  return bin;
}

void validate_record(const ImageRecord& r, double tol) {
  if (r.image_id.empty()) violation("image_id", "empty");
  if (r.geotag && r.frame_index) violation("geotag", "both geotag and frame index present");
  if (r.geotag) {
    if (!std::isfinite(r.geotag->lat) || std::abs(r.geotag->lat) > 90.0) violation("geotag.lat", "out of range");
    if (!std::isfinite(r.geotag->lon) || std::abs(r.geotag->lon) > 180.0) violation("geotag.lon", "out of range");
  }

  const std::size_t n = r.patch_shape.count();
  if (!r.tokens.empty()) {
    if (r.tokens.shape() != r.patch_shape) violation("patch_tokens", "grid shape differs from patch shape");
    if (r.tokens.dim == 0 || r.tokens.tokens.size() != n * r.tokens.dim)
      violation("patch_tokens", "size is not H_p * W_p * D");
    require_finite(r.tokens.tokens, "patch_tokens");
  }
  require_finite(r.class_token.values, "class_token");
  if (!r.tokens.empty() && !r.class_token.values.empty() && r.class_token.values.size() != r.tokens.dim)
    violation("class_token", "length differs from token dim");

  if (r.assignment) {
    const AssignmentResult& a = *r.assignment;
    if (a.probs.rows != n) violation("assignment", "row count differs from H_p * W_p");
    if (a.probs.cols < 2) violation("assignment", "needs at least one cluster and the dustbin");
    if (a.clusters() != r.clusters) violation("assignment", "cluster count differs from meta M");
    require_unit_interval(a.probs.values, "assignment", tol);
    for (std::size_t i = 0; i < a.probs.rows; ++i) {
      double s = 0.0;
      for (const double p : a.probs.row(i)) s += p;
      if (std::abs(s - 1.0) > tol) violation("assignment", "row " + std::to_string(i) + " does not sum to 1");
    }
    if (a.salience.size() != n) violation("salience", "length differs from token count");
    if (a.mask_a.rows != r.patch_shape.height || a.mask_a.cols != r.patch_shape.width)
      violation("salience", "mask shape differs from patch grid");
    require_unit_interval(a.mask_a.values, "salience", tol);
    for (std::size_t i = 0; i < n; ++i) {
      const double dustbin = a.probs(i, a.probs.cols - 1);
      if (std::abs(a.salience[i] - (1.0 - dustbin)) > tol) violation("salience", "complement identity broken");
      if (std::abs(a.mask_a.values[i] - a.salience[i]) > tol) violation("salience", "mask differs from salience");
    }
  }

  require_unit_interval(r.reliability.values.values, "reliability", 0.0);

  require_finite(r.global.values, "global_descriptor");
  if (!r.global.values.empty() && std::abs(l2_norm(r.global.values) - 1.0) > tol)
    violation("global_descriptor", "not unit L2");

  const LocalFeatureSet& lf = r.local;
  if (lf.descriptors.rows != lf.positions.size()) violation("local_descriptors", "row count differs from positions");
  if (lf.reliability.size() != lf.positions.size())
    violation("local_reliability", "length differs from positions");
  for (const GridPos& p : lf.positions)
    if (p.row >= lf.grid_height || p.col >= lf.grid_width) violation("local_positions", "position outside grid");
  require_finite(lf.descriptors.values, "local_descriptors");
  for (std::size_t k = 0; k < lf.descriptors.rows; ++k)
    if (std::abs(l2_norm(lf.descriptors.row(k)) - 1.0) > tol)
      violation("local_descriptors", "row " + std::to_string(k) + " not unit L2");
  require_unit_interval(lf.reliability, "local_reliability", 0.0);

  if (!r.mask.empty()) {
    const DiscriminativeMask& m = r.mask;
    if (m.values.rows != r.patch_shape.height || m.values.cols != r.patch_shape.width)
      violation("fused_mask", "shape differs from patch grid");
    require_unit_interval(m.values.values, "fused_mask", tol);
    if (!(m.top_fraction > 0.0 && m.top_fraction <= 1.0)) violation("fused_mask", "top_fraction outside (0,1]");
    if (m.bin.rows != m.values.rows || m.bin.cols != m.values.cols)
      violation("fused_mask", "binary mask shape differs");
    std::size_t selected = 0;
    for (const auto b : m.bin.values) selected += b != 0 ? 1 : 0;
    if (selected != selection_count(m.top_fraction, n)) violation("fused_mask", "binary cardinality mismatch");
    if (r.assignment && !r.reliability.values.empty()) {
      const Array2f rs = resample_bilinear(r.reliability.values, r.patch_shape.height, r.patch_shape.width);
      for (std::size_t i = 0; i < n; ++i) {
        const double expect = static_cast<double>(rs.values[i]) * r.assignment->mask_a.values[i];
        if (std::abs(expect - m.values.values[i]) > tol) violation("fused_mask", "values differ from R * M_a");
      }
    }
  }
}

}  // namespace vpr
