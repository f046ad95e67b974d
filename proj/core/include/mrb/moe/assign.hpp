#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mrb/ad/tensor.hpp"

namespace mrb::moe {

/// Per-expert voxel lists, each in greedy (descending affinity) order.
using ExpertVoxels = std::vector<std::vector<std::size_t>>;

/// Capacity-limited Top-K assignment of n rows to e experts from a row-stochastic P.
///
/// k = ⌊(n/e)·capacity⌋. With capacity 1 the result is a partition: (row, expert)
/// pairs are visited by descending P (ties: lower row id, then lower expert),
/// each row is taken once and an expert closes at k. The n mod e rows left over
/// are then handed out in the same order to experts still holding exactly k.
/// With any other capacity every column simply keeps its own Top-K, which may
/// overlap (capacity > 1) or leave rows unassigned (capacity < 1).
///
/// `row_ids` names the rows for tie-breaking and in the output; defaults to 0..n-1.
ExpertVoxels assign_topk(const ad::Tensor& probabilities, double capacity,
                         std::span<const std::size_t> row_ids = {});

/// Same, over the sub-block of `probabilities` given by `rows` x [col_begin, col_begin+cols).
ExpertVoxels assign_topk_block(const ad::Tensor& probabilities, std::span<const std::size_t> rows,
                               std::size_t col_begin, std::size_t cols, double capacity,
                               std::span<const std::size_t> row_ids);

}  // namespace mrb::moe
