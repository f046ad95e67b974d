#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>

#include "mrb/diffusion/generator.hpp"
#include "mrb/error.hpp"
#include "mrb/harness/checkpoint.hpp"
#include "mrb/harness/config.hpp"
#include "mrb/harness/data.hpp"
#include "mrb/harness/metrics.hpp"
#include "mrb/moe/encoder.hpp"

namespace mrb::harness {

/// Encoder plus, after stage 2, the generator.
struct Model {
  moe::MoeEncoder encoder;
  std::optional<diffusion::Generator> generator;

  std::size_t parameter_count() const;
};

Model init_model(const RunConfig& cfg);
Checkpoint to_checkpoint(const Model& model, const RunConfig& cfg, std::string kind,
                         std::uint64_t step, const MetricsReport& report);
/// Rebuilds the model; the checkpoint's own config describes the shapes.
Model from_checkpoint(const Checkpoint& ckpt);
RunConfig config_of(const Checkpoint& ckpt);

/// Non-finite loss during training. Carries the state at the failing step.
class DivergenceError : public NumericError {
 public:
  DivergenceError(const std::string& what, Checkpoint diagnostic)
      : NumericError(what), diagnostic_(std::move(diagnostic)) {}
  const Checkpoint& diagnostic() const noexcept { return diagnostic_; }

 private:
  Checkpoint diagnostic_;
};

struct TrainResult {
  Model model;
  MetricsReport report;
};

/// Trains every encoder parameter on the stage-1 loss. Series: loss terms per
/// step, 100-step block means (loss_ma100), held-out cosine per evaluation.
TrainResult train_stage1(const RunConfig& cfg, const RunData& data);

/// Trains Time Router, Space Router and denoiser with the encoder frozen.
/// When `model.generator` is empty a fresh generator is initialized.
TrainResult train_stage2(const RunConfig& cfg, const Model& model, const RunData& data);

/// Trains only U and every W_r on the first ⌈fraction·n⌉ training samples.
/// With finetune.align, U first takes the rows of the `source` voxels matched
/// on that subset; `source` is then required.
TrainResult finetune_routers(const RunConfig& cfg, const Model& model, const RunData& data,
                             double fraction, const synth::Dataset* source = nullptr);

/// Block means of `values` over consecutive windows of `window` steps (the
/// last partial window is dropped).
std::vector<double> block_means(std::span<const double> values, std::size_t window);
bool non_increasing(std::span<const double> values);

}  // namespace mrb::harness
