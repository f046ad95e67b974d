#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mrb/ad/tensor.hpp"

// Synthetic subjects with planted functional voxel groups.
//
// A world fixes the ground truth: which voxels belong to which group, how each
// group reads out the stimulus latent, and the target embedding maps. A subject
// sees the same responses through its own voxel permutation and gains.

namespace mrb::synth {

struct WorldSpec {
  std::size_t groups = 16;
  std::size_t voxels = 128;
  std::size_t latent = 8;   // stimulus latent width d
  std::size_t target = 32;  // embedding width D
  double noise = 0.1;       // σ_n
  std::uint64_t seed = 1;
  // Shape of the diffusion latent derived from each stimulus.
  std::size_t latent_tokens = 4;
  std::size_t token_width = 16;

  void validate() const;
};

struct World {
  WorldSpec spec;
  std::vector<std::size_t> group_of;   // canonical voxel -> group
  ad::Tensor loadings;                 // groups x latent, unit rows
  std::vector<double> voxel_weights;   // w_i ~ N(1, 0.1²)
  ad::Tensor img_map;                  // target x latent
  ad::Tensor text_map;                 // target x latent
  ad::Tensor latent_map;               // (tokens·width) x latent

  std::size_t voxels_per_group() const { return spec.voxels / spec.groups; }
};

struct Subject {
  std::uint64_t id = 0;
  std::vector<std::size_t> perm;  // canonical voxel i is observed at position perm[i]
  std::vector<double> gains;      // per observed position, in [0.8, 1.2]

  /// Planted group of each observed position.
  std::vector<std::size_t> observed_groups(const World& world) const;
};

struct Sample {
  std::vector<double> x;
  std::vector<double> y_img;
  std::vector<double> y_text;
  std::vector<double> s;
};

struct Dataset {
  std::size_t voxels = 0;
  std::size_t target = 0;
  std::size_t latent = 0;
  std::vector<Sample> samples;

  std::size_t size() const noexcept { return samples.size(); }
  /// First `n` samples (n clamped to size()).
  Dataset head(std::size_t n) const;
  /// Rows [begin, end).
  Dataset slice(std::size_t begin, std::size_t end) const;
};

World gen_world(const WorldSpec& spec);
World gen_world(WorldSpec spec, std::uint64_t seed);

/// subject_seed 0 is the canonical subject: identity permutation, unit gains.
Subject gen_subject(const World& world, std::uint64_t subject_seed);

/// Sample i depends only on (world, subject, seed, i), so two subjects drawn
/// with the same seed see the same stimuli and the same voxel noise.
Dataset gen_dataset(const World& world, const Subject& subject, std::size_t n,
                    std::uint64_t seed);

/// Diffusion latent of a stimulus, tokens x width.
ad::Tensor stimulus_latent(const World& world, std::span<const double> s);

}  // namespace mrb::synth
