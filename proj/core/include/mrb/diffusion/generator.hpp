#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mrb/ad/rng.hpp"
#include "mrb/diffusion/denoiser.hpp"
#include "mrb/diffusion/schedule.hpp"
#include "mrb/moe/encoder.hpp"
#include "mrb/router/space_router.hpp"
#include "mrb/router/time_router.hpp"

namespace mrb::diffusion {

struct GeneratorConfig {
  router::TimeRouterConfig time;
  router::SpaceRouterConfig space;
  DenoiserConfig denoiser;
  ScheduleConfig schedule;
  double cond_dropout = 0.1;

  /// Cross-checks widths and step counts shared between the parts.
  void validate() const;
};

struct GeneratorBindings {
  ad::Bindings time;
  ad::Bindings space;
  ad::Bindings denoiser;

  static GeneratorBindings frozen() {
    return {{ad::Binding::kFrozen}, {ad::Binding::kFrozen}, {ad::Binding::kFrozen}};
  }
};

/// Everything trained in stage 2: Time Router, Space Router and the denoiser.
class Generator {
 public:
  Generator(GeneratorConfig config, std::uint64_t seed);
  Generator(GeneratorConfig config, ad::ParameterSet time, ad::ParameterSet space,
            ad::ParameterSet denoiser);

  const GeneratorConfig& config() const noexcept { return config_; }
  const NoiseSchedule& schedule() const noexcept { return schedule_; }
  const router::TimeRouter& time_router() const noexcept { return time_; }
  router::TimeRouter& time_router() noexcept { return time_; }
  const router::SpaceRouter& space_router() const noexcept { return space_; }
  router::SpaceRouter& space_router() noexcept { return space_; }
  const Denoiser& denoiser() const noexcept { return denoiser_; }
  Denoiser& denoiser() noexcept { return denoiser_; }

  struct Conditioning {
    ad::Var p_t;         // batch x L
    ad::Var condition;   // (batch·n_z) x d_c
    router::SpaceAttention attention;
    router::SelectedEmbeddings selected;
  };

  /// Routes the frozen expert embeddings into a conditioning tensor for z_t at timesteps t.
  Conditioning condition(ad::Tape& tape, ad::Var z_t, std::span<const router::ExpertTable* const> tables,
                         std::span<const std::size_t> t, const GeneratorBindings& bind = {}) const;

 private:
  GeneratorConfig config_;
  NoiseSchedule schedule_;
  router::TimeRouter time_;
  router::SpaceRouter space_;
  Denoiser denoiser_;
};

struct Stage2Loss {
  ad::Var total;
  double denoise = 0.0;  // mean over samples of ‖ε − ε̂‖²
  double kl = 0.0;       // mean KL(P_T ‖ guide)
  ad::Var p_t;
  std::vector<std::size_t> t;
};

/// Draws t, ε and the condition-dropout mask for every sample from `rng`, in
/// sample order, then returns denoise + kl_weight·KL. `z0` holds one
/// n_z x d_z latent per sample.
Stage2Loss stage2_loss(ad::Tape& tape, const Generator& gen,
                       std::span<const router::ExpertTable* const> tables,
                       std::span<const ad::Tensor> z0, ad::RngStream& rng, double kl_weight,
                       const GeneratorBindings& bind = {});

/// Same, computing the expert embeddings with the frozen encoder from a
/// (batch·v) x 1 voxel column; the encoder never enters the tape as a parameter.
Stage2Loss stage2_loss(ad::Tape& tape, const Generator& gen, const moe::MoeEncoder& encoder,
                       const ad::Tensor& voxels, std::span<const ad::Tensor> z0,
                       ad::RngStream& rng, double kl_weight, const GeneratorBindings& bind = {});

struct GenConfig {
  std::size_t steps = 30;
  double guidance = 15.0;  // s
  std::uint64_t seed = 0;

  void validate(std::size_t schedule_steps) const;
};

/// Per reverse step: timestep, P_T (batch x L) and Space-Router attention.
struct SampleTrace {
  struct Step {
    std::size_t t = 0;
    ad::Tensor p_t;
    ad::Tensor attention;
    std::vector<std::size_t> counts;
    std::vector<std::size_t> levels;  // hard/fixed selection per sample
  };
  std::vector<Step> steps;
};

/// Classifier-free-guided ancestral sampling. Item ids[b] seeds sample b's
/// noise stream, so results do not depend on how items are batched.
std::vector<ad::Tensor> sample(const Generator& gen,
                               std::span<const router::ExpertTable* const> tables,
                               std::span<const std::uint64_t> ids, const GenConfig& cfg,
                               SampleTrace* trace = nullptr);

}  // namespace mrb::diffusion
