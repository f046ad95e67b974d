#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mrb/ad/tensor.hpp"
#include "mrb/harness/config.hpp"
#include "mrb/moe/encoder.hpp"
#include "mrb/router/space_router.hpp"
#include "mrb/synth/world.hpp"

namespace mrb::harness {

/// World, subject and the train/test splits a run works on.
struct RunData {
  synth::World world;
  synth::Subject subject;
  synth::Dataset train;
  synth::Dataset test;
};

/// Generates (or loads, when paths are set) the datasets for `subject`.
RunData prepare_data(const RunConfig& cfg, std::uint64_t subject);
inline RunData prepare_data(const RunConfig& cfg) { return prepare_data(cfg, cfg.data.subject); }

/// Batch views of a dataset, sample-major.
ad::Tensor voxel_column(const synth::Dataset& data, std::span<const std::size_t> items);
ad::Tensor image_targets(const synth::Dataset& data, std::span<const std::size_t> items);
ad::Tensor text_targets(const synth::Dataset& data, std::span<const std::size_t> items);
std::vector<ad::Tensor> latents(const synth::World& world, const synth::Dataset& data,
                                std::span<const std::size_t> items);

struct Predictions {
  ad::Tensor img;   // n x D
  ad::Tensor text;  // n x D
};

/// Frozen encoder pass over every sample, in chunks of `chunk`.
Predictions predict(const moe::MoeEncoder& encoder, const synth::Dataset& data,
                    std::size_t chunk = 256);

/// Frozen expert embeddings of every sample.
std::vector<router::ExpertTable> expert_tables(const moe::MoeEncoder& encoder,
                                               const synth::Dataset& data,
                                               std::size_t chunk = 256);

/// Same voxel moments as `like`, independent N(0, 1) draws otherwise.
synth::Dataset random_inputs(const synth::Dataset& like, std::uint64_t seed);

std::vector<std::size_t> iota(std::size_t n);

}  // namespace mrb::harness
