#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mrb/ad/binding.hpp"
#include "mrb/ad/ops.hpp"

namespace mrb::router {

enum class LevelMode { kSoft, kHard, kFixed };

std::string to_string(LevelMode mode);
/// "soft" | "hard" | "fixed"; throws ConfigError otherwise.
LevelMode parse_level_mode(const std::string& name);

struct TimeRouterConfig {
  std::size_t levels = 4;
  std::size_t time_width = 16;  // d_t
  std::size_t key_width = 16;   // d_k
  double sigma = 1.0;
  double kl_weight = 0.1;  // λ_T
  LevelMode mode = LevelMode::kSoft;

  void validate() const;
};

/// Sinusoidal code of timestep t: [sin(t·ω_0), cos(t·ω_0), …] with ω geometric
/// from 1 down to 1e-4. Width must be even.
std::vector<double> time_embedding(std::size_t t, std::size_t steps, std::size_t width);

/// Gaussian over guide levels 1..L centred at L·t/T; entry l-1 is level l.
std::vector<double> guide_distribution(std::size_t t, std::size_t steps, std::size_t levels,
                                       double sigma);

/// (codes·W_Q)(Φ·W_K)ᵀ/√d_k; one row per code.
ad::Var time_logits(ad::Var codes, ad::Var w_q, ad::Var phi, ad::Var w_k);

/// Mean over rows of KL(P ‖ Q). Q must be strictly positive.
ad::Var kl_penalty(ad::Var p, const ad::Tensor& q);

struct LevelSelection {
  LevelMode mode = LevelMode::kSoft;
  std::vector<double> weights;  // soft: P_T verbatim
  std::size_t level = 0;        // hard/fixed
};

/// hard: argmax (ties → lowest level); fixed: min(⌊L·t/T⌋, L-1).
LevelSelection select_level(LevelMode mode, std::span<const double> p, std::size_t t,
                            std::size_t steps, std::size_t levels);

/// Level weights P_T = softmax((t_c·W_Q)(Φ·W_K)ᵀ/√d_k).
class TimeRouter {
 public:
  TimeRouter(TimeRouterConfig config, std::size_t steps, std::uint64_t seed);
  TimeRouter(TimeRouterConfig config, std::size_t steps, ad::ParameterSet params);

  const TimeRouterConfig& config() const noexcept { return config_; }
  std::size_t steps() const noexcept { return steps_; }
  const ad::ParameterSet& params() const noexcept { return params_; }
  ad::ParameterSet& params() noexcept { return params_; }

  /// One row of logits per timestep, batch x L.
  ad::Var logits(ad::Tape& tape, std::span<const std::size_t> t,
                 const ad::Bindings& bind = {}) const;
  ad::Var weights(ad::Tape& tape, std::span<const std::size_t> t,
                  const ad::Bindings& bind = {}) const;
  /// Guide rows for the same timesteps, batch x L.
  ad::Tensor guide(std::span<const std::size_t> t) const;
  /// No-gradient convenience.
  std::vector<double> weights(std::size_t t) const;

 private:
  void bind_layout();

  TimeRouterConfig config_;
  std::size_t steps_;
  ad::ParameterSet params_;
  ad::ParamId phi_ = 0, query_ = 0, key_ = 0;
};

}  // namespace mrb::router
