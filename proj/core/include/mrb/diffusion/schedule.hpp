#pragma once

#include <cstddef>
#include <vector>

#include "mrb/ad/tensor.hpp"

namespace mrb::diffusion {

struct ScheduleConfig {
  std::size_t steps = 30;  // T
  double beta_min = 0.01;
  double beta_max = 0.3;

  void validate() const;
};

/// Linear β schedule with α_t = 1 − β_t and ᾱ_t = Π_{i≤t} α_i.
struct NoiseSchedule {
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;

  static NoiseSchedule linear(const ScheduleConfig& config);

  std::size_t steps() const noexcept { return beta.size(); }
  double alpha_bar_at(std::size_t t) const;
};

/// z_t = √ᾱ · z₀ + √(1 − ᾱ) · ε.
ad::Tensor forward_noise(const ad::Tensor& z0, const ad::Tensor& eps, double alpha_bar);
ad::Tensor forward_noise(const ad::Tensor& z0, std::size_t t, const ad::Tensor& eps,
                         const NoiseSchedule& schedule);

/// ε̂_u + s·(ε̂_c − ε̂_u).
ad::Tensor guided_noise(const ad::Tensor& uncond, const ad::Tensor& cond, double scale);

/// One reverse transition between ᾱ_prev (next, less noisy) and ᾱ_cur:
/// z' = (z − β/√(1−ᾱ_cur)·ε̂)/√α + √β̃·ξ, with α = ᾱ_cur/ᾱ_prev and
/// β̃ = β(1−ᾱ_prev)/(1−ᾱ_cur). Pass xi = nullptr for the final step.
ad::Tensor ancestral_step(const ad::Tensor& z, const ad::Tensor& eps_hat, double alpha_bar_cur,
                          double alpha_bar_prev, const ad::Tensor* xi);

/// `count` timesteps evenly spaced over [0, T−1], descending from T−1 (ending at 0 when count > 1).
std::vector<std::size_t> sampling_timesteps(std::size_t steps, std::size_t count);

}  // namespace mrb::diffusion
