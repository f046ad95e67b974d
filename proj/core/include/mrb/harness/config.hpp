#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mrb/diffusion/generator.hpp"
#include "mrb/moe/config.hpp"
#include "mrb/moe/losses.hpp"
#include "mrb/synth/world.hpp"

namespace mrb::harness {

struct DataConfig {
  std::uint64_t subject = 0;  // 0 = canonical
  std::size_t train = 4096;
  std::size_t test = 512;
  std::uint64_t train_seed = 1;
  std::uint64_t test_seed = 2;
  /// When set, datasets are loaded from these files instead of generated.
  std::string train_path;
  std::string test_path;
};

struct Stage1Config {
  std::size_t steps = 2000;
  std::size_t batch = 32;
  double lr = 1e-3;
  /// Cosine decay of the learning rate to zero over the run.
  bool cosine_decay = false;
  /// Held-out evaluation period; 0 means once per epoch (train / batch steps).
  std::size_t eval_every = 0;
  moe::Stage1Weights weights;
};

struct Stage2Config {
  std::size_t steps = 8000;
  std::size_t batch = 32;
  double lr = 1e-3;
  bool cosine_decay = false;
  std::size_t log_every = 50;
};

struct FinetuneConfig {
  std::uint64_t subject = 7;  // new subject
  std::vector<double> fractions{0.025, 0.1, 0.25, 0.5, 1.0};
  /// Start U from the source rows matched by response signatures.
  bool align = true;
  std::size_t steps = 500;
  std::size_t batch = 32;
  double lr = 3e-5;
  bool cosine_decay = true;
};

struct SampleConfig {
  std::size_t items = 256;
  diffusion::GenConfig gen{.steps = 30, .guidance = 2.0, .seed = 5};
  std::size_t batch = 64;
};

struct EvalConfig {
  std::vector<std::size_t> ranks{1, 2, 4, 8, 16, 32};
  std::size_t n_baselines = 16;
  std::size_t n_interp = 16;
  std::size_t attribute_items = 8;
  std::size_t random_partitions = 100;
  std::size_t routing_items = 64;
};

/// Everything a run depends on besides the code itself.
struct RunConfig {
  std::uint64_t seed = 1;
  synth::WorldSpec world;
  DataConfig data;
  moe::HierarchyConfig model;
  Stage1Config stage1;
  diffusion::GeneratorConfig generator;
  Stage2Config stage2;
  FinetuneConfig finetune;
  SampleConfig sample;
  EvalConfig eval;

  /// Cross-module consistency (voxel count, widths, levels, T).
  void validate() const;
  std::string to_json() const;
  /// Missing keys keep their defaults; unknown keys are a ConfigError.
  static RunConfig from_json(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);
};

}  // namespace mrb::harness
