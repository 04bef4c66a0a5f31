#pragma once

#include <cstddef>

#include "vpr/types.hpp"

namespace vpr {

/// log s_ij = w_j . t_i + b_j for the M salient clusters; the last column holds
/// the dustbin score. Result is [n x (M+1)].
Array2d log_score_matrix(const PatchGrid& grid, const ClusterParams& params);

/// exp of log_score_matrix. Throws std::range_error when an entry overflows;
/// callers that cannot bound their token norms should use the log form.
Array2d score_matrix(const PatchGrid& grid, const ClusterParams& params);

/// Log-domain Sinkhorn on positive scores. Row targets are 1, every column
/// (dustbin included) targets n/(M+1). Each of `iters` rounds normalizes rows
/// then columns; a final row normalization makes every row sum to 1.
/// `shape` is used to reshape the salience vector into M_a.
AssignmentResult sinkhorn_assign(const Array2d& scores, std::size_t iters, GridShape shape);

/// Same as sinkhorn_assign, taking log scores directly.
AssignmentResult sinkhorn_assign_log(const Array2d& log_scores, std::size_t iters, GridShape shape);

/// Score + Sinkhorn with the parameter set's iteration count.
AssignmentResult assign_tokens(const PatchGrid& grid, const ClusterParams& params);

/// Per-cluster weighted sums of projected tokens, each block L2-normalized,
/// followed by the projected class token; the whole vector is L2-normalized.
/// Length M*l + g.
GlobalDescriptor aggregate_global(const PatchGrid& grid, const ClassToken& cls, const AssignmentResult& assignment,
                                  const ClusterParams& params);

/// dot_f64 of two unit descriptors, clamped to [-1, 1].
double global_similarity(const GlobalDescriptor& q, const GlobalDescriptor& c);

}  // namespace vpr
