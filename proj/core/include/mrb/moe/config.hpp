#pragma once

#include <cstddef>

namespace mrb::moe {

enum class Activation { kGelu, kTanh };

/// Shape of the expert hierarchy. Level l has root_experts·branching^l experts.
struct HierarchyConfig {
  std::size_t voxels = 128;
  std::size_t levels = 4;
  std::size_t root_experts = 2;
  std::size_t branching = 2;
  std::size_t voxel_embed = 8;  // width of the per-voxel identity embedding U
  std::size_t feature = 16;     // expert hidden/output width
  std::size_t embed = 32;       // target embedding width
  double capacity = 1.0;
  Activation activation = Activation::kGelu;  // expert MLP nonlinearity

  std::size_t experts_at(std::size_t level) const;
  /// Router/expert input width at a level: 1 + voxel_embed at level 0, feature above.
  std::size_t input_width(std::size_t level) const;
  /// Parent expert index at level-1 of expert j at `level` (level > 0).
  std::size_t parent_of(std::size_t /*level*/, std::size_t expert) const { return expert / branching; }
  std::size_t total_experts() const;

  void validate() const;
};

}  // namespace mrb::moe
