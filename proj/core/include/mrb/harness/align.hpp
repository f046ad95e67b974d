#pragma once

#include <cstddef>
#include <vector>

#include "mrb/moe/encoder.hpp"
#include "mrb/synth/world.hpp"

namespace mrb::harness {

/// Per-voxel signature: covariance of the standardized response with the
/// concatenated image and text targets, v x 2D.
ad::Tensor response_signatures(const synth::Dataset& data);

/// One-to-one voxel correspondence: out[j] is the source voxel whose signature
/// best matches target voxel j (greedy on cosine similarity, best pairs first).
std::vector<std::size_t> match_voxels(const synth::Dataset& source, const synth::Dataset& target);

/// Row j of U takes the source row match[j]. Nothing else changes.
void align_voxel_embedding(moe::MoeEncoder& encoder, std::span<const std::size_t> match);

}  // namespace mrb::harness
