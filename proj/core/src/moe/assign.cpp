#include "mrb/moe/assign.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "mrb/error.hpp"

namespace mrb::moe {

namespace {

struct Pair {
  double p;
  std::size_t row_id;
  std::size_t local_row;
  std::size_t expert;
};

bool greedy_before(const Pair& a, const Pair& b) {
  if (a.p != b.p) return a.p > b.p;
  if (a.row_id != b.row_id) return a.row_id < b.row_id;
  return a.expert < b.expert;
}

}  // namespace

ExpertVoxels assign_topk_block(const ad::Tensor& probabilities, std::span<const std::size_t> rows,
                               std::size_t col_begin, std::size_t cols, double capacity,
                               std::span<const std::size_t> row_ids) {
  const std::size_t n = rows.size();
  const std::size_t e = cols;
  if (e == 0) throw ConfigError("assign_topk: no experts");
  if (e > n) {
    throw ConfigError("assign_topk: " + std::to_string(e) + " experts for only " +
                      std::to_string(n) + " voxels");
  }
  if (row_ids.size() != n) throw ShapeError("assign_topk: row id count mismatch");
  if (col_begin + cols > probabilities.cols()) throw ShapeError("assign_topk: column range");
  if (!(capacity > 0.0) || !std::isfinite(capacity)) {
    throw ConfigError("assign_topk: capacity must be positive");
  }
  const auto k = static_cast<std::size_t>(
      std::floor(static_cast<double>(n) / static_cast<double>(e) * capacity));
  if (k == 0) throw ConfigError("assign_topk: capacity leaves experts empty");

  std::vector<Pair> pairs;
  pairs.reserve(n * e);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < e; ++j)
      pairs.push_back({probabilities(rows[r], col_begin + j), row_ids[r], r, j});
  std::sort(pairs.begin(), pairs.end(), greedy_before);

  ExpertVoxels out(e);
  if (capacity != 1.0) {
    // Independent per-column Top-K.
    for (const Pair& pr : pairs) {
      if (out[pr.expert].size() < std::min(k, n)) out[pr.expert].push_back(pr.row_id);
    }
    return out;
  }

  std::vector<char> taken(n, 0);
  for (const Pair& pr : pairs) {
    if (taken[pr.local_row] || out[pr.expert].size() >= k) continue;
    taken[pr.local_row] = 1;
    out[pr.expert].push_back(pr.row_id);
  }
  if (k * e < n) {
    for (const Pair& pr : pairs) {
      if (taken[pr.local_row] || out[pr.expert].size() != k) continue;
      taken[pr.local_row] = 1;
      out[pr.expert].push_back(pr.row_id);
    }
  }
  return out;
}

ExpertVoxels assign_topk(const ad::Tensor& probabilities, double capacity,
                         std::span<const std::size_t> row_ids) {
  std::vector<std::size_t> rows(probabilities.rows());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  if (row_ids.empty()) row_ids = rows;
  return assign_topk_block(probabilities, rows, 0, probabilities.cols(), capacity, row_ids);
}

}  // namespace mrb::moe
