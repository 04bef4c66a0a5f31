#include "vpr/aggregation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

#include "vpr/dot.hpp"

namespace vpr {

namespace {

using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

RowMatrixXd to_eigen(const float* data, std::size_t rows, std::size_t cols) {
  return Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
             data, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols))
      .cast<double>();
}

// Project rows of `x` ([n x D]) to `out_dim` columns with `proj` ([D x out_dim]),
// or keep the first out_dim coordinates when no projection is given.
RowMatrixXd project(const RowMatrixXd& x, const Array2f& proj, std::size_t out_dim) {
  if (!proj.empty()) return x * to_eigen(proj.values.data(), proj.rows, proj.cols);
  RowMatrixXd out = RowMatrixXd::Zero(x.rows(), static_cast<Eigen::Index>(out_dim));
  const Eigen::Index keep = std::min<Eigen::Index>(x.cols(), static_cast<Eigen::Index>(out_dim));
  out.leftCols(keep) = x.leftCols(keep);
  return out;
}

double log_sum_exp(const double* values, std::size_t count, std::size_t stride, const double* offsets,
                   std::size_t offset_stride) {
  double peak = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < count; ++k) peak = std::max(peak, values[k * stride] + offsets[k * offset_stride]);
  double sum = 0.0;
  for (std::size_t k = 0; k < count; ++k) sum += std::exp(values[k * stride] + offsets[k * offset_stride] - peak);
  return peak + std::log(sum);
}

}  // namespace

Array2d log_score_matrix(const PatchGrid& grid, const ClusterParams& params) {
  params.validate();
  if (grid.dim != params.dim)
    throw std::invalid_argument("score_matrix: token dim " + std::to_string(grid.dim) + " != weight width " +
                                std::to_string(params.dim));
  const std::size_t n = grid.count();
  const std::size_t m = params.clusters;
  const RowMatrixXd tokens = to_eigen(grid.tokens.data(), n, grid.dim);
  const RowMatrixXd weights = to_eigen(params.weights.values.data(), m, params.dim);
  const RowMatrixXd logits = tokens * weights.transpose();

  Array2d out(n, m + 1);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j)
      out(i, j) = logits(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) + params.biases[j];
    out(i, m) = params.dustbin_score;
  }
  return out;
}

Array2d score_matrix(const PatchGrid& grid, const ClusterParams& params) {
  Array2d s = log_score_matrix(grid, params);
  for (double& v : s.values) {
    v = std::exp(v);
    if (!std::isfinite(v) || v <= 0.0) throw std::range_error("score_matrix: exp overflow/underflow; use log scores");
  }
  return s;
}

AssignmentResult sinkhorn_assign(const Array2d& scores, std::size_t iters, GridShape shape) {
  Array2d logs(scores.rows, scores.cols);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double s = scores.values[i];
    if (!(s > 0.0) || !std::isfinite(s)) throw std::invalid_argument("sinkhorn_assign: scores must be positive and finite");
    logs.values[i] = std::log(s);
  }
  return sinkhorn_assign_log(logs, iters, shape);
}

AssignmentResult sinkhorn_assign_log(const Array2d& log_scores, std::size_t iters, GridShape shape) {
  if (iters < 1) throw std::invalid_argument("sinkhorn_assign: iters must be >= 1");
  const std::size_t n = log_scores.rows;
  const std::size_t cols = log_scores.cols;
  if (n == 0 || cols < 2) throw std::invalid_argument("sinkhorn_assign: need n >= 1 and at least one cluster");
  if (shape.count() != n) throw std::invalid_argument("sinkhorn_assign: grid shape does not match token count");
  for (const double v : log_scores.values)
    if (!std::isfinite(v)) throw std::invalid_argument("sinkhorn_assign: non-finite log score");

  const double log_col_target = std::log(static_cast<double>(n) / static_cast<double>(cols));
  std::vector<double> u(n, 0.0);     // row potentials
  std::vector<double> v(cols, 0.0);  // column potentials
  const double* L = log_scores.values.data();

  const auto normalize_rows = [&] {
    for (std::size_t i = 0; i < n; ++i) u[i] = -log_sum_exp(L + i * cols, cols, 1, v.data(), 1);
  };
  const auto normalize_cols = [&] {
    for (std::size_t j = 0; j < cols; ++j) v[j] = log_col_target - log_sum_exp(L + j, n, cols, u.data(), 1);
  };

  for (std::size_t it = 0; it < iters; ++it) {
    normalize_rows();
    normalize_cols();
  }
  normalize_rows();

  AssignmentResult out;
  out.probs = Array2d(n, cols);
  out.salience.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double salient = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      const double p = std::exp(L[i * cols + j] + u[i] + v[j]);
      out.probs(i, j) = p;
      if (j + 1 < cols) salient += p;
    }
    out.salience[i] = salient;
  }
  out.mask_a = Array2d(shape.height, shape.width);
  out.mask_a.values = out.salience;
  return out;
}

AssignmentResult assign_tokens(const PatchGrid& grid, const ClusterParams& params) {
  return sinkhorn_assign_log(log_score_matrix(grid, params), params.sinkhorn_iters, grid.shape());
}

GlobalDescriptor aggregate_global(const PatchGrid& grid, const ClassToken& cls, const AssignmentResult& assignment,
                                  const ClusterParams& params) {
  params.validate();
  if (grid.dim != params.dim) throw std::invalid_argument("aggregate_global: token dim differs from params");
  if (assignment.tokens() != grid.count() || assignment.clusters() != params.clusters)
    throw std::invalid_argument("aggregate_global: assignment inconsistent with grid or params");
  if (params.class_dim > 0 && cls.values.size() != grid.dim)
    throw std::invalid_argument("aggregate_global: class token length differs from token dim");

  const std::size_t n = grid.count();
  const std::size_t m = params.clusters;
  const std::size_t l = params.reduced_dim;
  const std::size_t g = params.class_dim;

  const RowMatrixXd projected = project(to_eigen(grid.tokens.data(), n, grid.dim), params.projection, l);
  const RowMatrixXd probs = Eigen::Map<const RowMatrixXd>(assignment.probs.values.data(), static_cast<Eigen::Index>(n),
                                                          static_cast<Eigen::Index>(m + 1))
                                .leftCols(static_cast<Eigen::Index>(m));
  RowMatrixXd blocks = probs.transpose() * projected;  // [M x l]
  for (Eigen::Index j = 0; j < blocks.rows(); ++j) {
    const double norm = blocks.row(j).norm();
    if (norm > 0.0) blocks.row(j) /= norm;
  }

  std::vector<double> full(m * l + g, 0.0);
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t k = 0; k < l; ++k)
      full[j * l + k] = blocks(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k));
  if (g > 0) {
    const RowMatrixXd cls_proj = project(to_eigen(cls.values.data(), 1, cls.values.size()), params.class_projection, g);
    for (std::size_t k = 0; k < g; ++k) full[m * l + k] = cls_proj(0, static_cast<Eigen::Index>(k));
  }

  double norm = 0.0;
  for (const double x : full) norm += x * x;
  norm = std::sqrt(norm);
  if (!(norm > 0.0)) throw std::invalid_argument("aggregate_global: descriptor has zero norm");

  GlobalDescriptor d;
  d.values.resize(full.size());
  for (std::size_t k = 0; k < full.size(); ++k) d.values[k] = static_cast<float>(full[k] / norm);
  return d;
}

double global_similarity(const GlobalDescriptor& q, const GlobalDescriptor& c) {
  if (q.values.size() != c.values.size()) throw std::invalid_argument("global_similarity: dimension mismatch");
  return std::clamp(dot_f64(q.values, c.values), -1.0, 1.0);
}

}  // namespace vpr
