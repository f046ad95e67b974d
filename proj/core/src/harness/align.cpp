#include "mrb/harness/align.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

#include "mrb/error.hpp"

namespace mrb::harness {

ad::Tensor response_signatures(const synth::Dataset& data) {
  const std::size_t v = data.voxels, D = data.target, n = data.size();
  if (n < 2) throw ConfigError("response_signatures: need at least two samples");
  std::vector<double> mean(v, 0.0), var(v, 0.0);
  for (const auto& s : data.samples)
    for (std::size_t i = 0; i < v; ++i) mean[i] += s.x[i];
  for (double& m : mean) m /= static_cast<double>(n);
  for (const auto& s : data.samples)
    for (std::size_t i = 0; i < v; ++i) var[i] += (s.x[i] - mean[i]) * (s.x[i] - mean[i]);

  ad::Tensor sig(v, 2 * D);
  for (const auto& s : data.samples) {
    for (std::size_t i = 0; i < v; ++i) {
      const double z = s.x[i] - mean[i];
      for (std::size_t d = 0; d < D; ++d) {
        sig(i, d) += z * s.y_img[d];
        sig(i, D + d) += z * s.y_text[d];
      }
    }
  }
  for (std::size_t i = 0; i < v; ++i) {
    const double scale = var[i] > 0.0 ? 1.0 / std::sqrt(var[i] * static_cast<double>(n)) : 0.0;
    for (double& x : sig.row_span(i)) x *= scale;
  }
  return sig;
}

std::vector<std::size_t> match_voxels(const synth::Dataset& source, const synth::Dataset& target) {
  if (source.voxels != target.voxels || source.target != target.target)
    throw ConfigError("match_voxels: source and target shapes differ");
  const std::size_t v = source.voxels;
  const auto a = response_signatures(source);
  const auto b = response_signatures(target);
  auto norms = [](const ad::Tensor& t) {
    std::vector<double> out(t.rows());
    for (std::size_t i = 0; i < t.rows(); ++i) {
      double s = 0.0;
      for (double x : t.row_span(i)) s += x * x;
      out[i] = std::sqrt(s);
    }
    return out;
  };
  const auto na = norms(a), nb = norms(b);

  std::vector<std::tuple<double, std::size_t, std::size_t>> pairs;
  pairs.reserve(v * v);
  for (std::size_t j = 0; j < v; ++j) {
    for (std::size_t i = 0; i < v; ++i) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(j, k);
      const double denom = na[i] * nb[j];
      pairs.emplace_back(denom > 0.0 ? -s / denom : 0.0, j, i);
    }
  }
  std::sort(pairs.begin(), pairs.end());
  std::vector<std::size_t> match(v, v);
  std::vector<bool> used(v, false);
  for (const auto& [score, j, i] : pairs) {
    if (match[j] != v || used[i]) continue;
    match[j] = i;
    used[i] = true;
  }
  return match;
}

void align_voxel_embedding(moe::MoeEncoder& encoder, std::span<const std::size_t> match) {
  auto& u = encoder.params().value(encoder.voxel_embedding_id());
  if (match.size() != u.rows()) throw ConfigError("align_voxel_embedding: match size differs from voxel count");
  const ad::Tensor source = u;
  for (std::size_t j = 0; j < match.size(); ++j) {
    if (match[j] >= u.rows()) throw ConfigError("align_voxel_embedding: match index out of range");
    for (std::size_t k = 0; k < u.cols(); ++k) u(j, k) = source(match[j], k);
  }
}

}  // namespace mrb::harness
