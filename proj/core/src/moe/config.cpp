#include "mrb/moe/config.hpp"

#include <string>

#include "mrb/error.hpp"

namespace mrb::moe {

std::size_t HierarchyConfig::experts_at(std::size_t level) const {
  std::size_t e = root_experts;
  for (std::size_t l = 0; l < level; ++l) e *= branching;
  return e;
}

std::size_t HierarchyConfig::input_width(std::size_t level) const {
  return level == 0 ? 1 + voxel_embed : feature;
}

std::size_t HierarchyConfig::total_experts() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < levels; ++l) n += experts_at(l);
  return n;
}

void HierarchyConfig::validate() const {
  if (levels == 0) throw ConfigError("hierarchy needs at least one level");
  if (root_experts == 0 || branching == 0) throw ConfigError("expert counts must be positive");
  if (feature == 0 || embed == 0) throw ConfigError("feature/embed widths must be positive");
  if (capacity != 1.0) {
    throw ConfigError("the hierarchical encoder requires capacity factor 1 (partition routing)");
  }
  if (experts_at(levels - 1) > voxels) {
    throw ConfigError("final level has " + std::to_string(experts_at(levels - 1)) +
                      " experts for " + std::to_string(voxels) + " voxels");
  }
}

}  // namespace mrb::moe
