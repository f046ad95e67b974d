#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mrb/ad/binding.hpp"
#include "mrb/ad/ops.hpp"

namespace mrb::diffusion {

struct DenoiserConfig {
  std::size_t tokens = 4;       // n_z
  std::size_t width = 16;       // d_z
  std::size_t cond = 16;        // d_c
  std::size_t hidden = 32;
  std::size_t mlp = 64;
  std::size_t time_width = 16;
  std::size_t blocks = 2;
  std::size_t steps = 30;       // T, for the time code

  void validate() const;
};

/// Token-wise trunk with cross-attention blocks reading a conditioning tensor:
/// h = z·W_in + pos + time(t); per block h += attn(h, C), h += mlp(h); ε̂ = h·W_out + b.
class Denoiser {
 public:
  Denoiser(DenoiserConfig config, std::uint64_t seed);
  Denoiser(DenoiserConfig config, ad::ParameterSet params);

  const DenoiserConfig& config() const noexcept { return config_; }
  const ad::ParameterSet& params() const noexcept { return params_; }
  ad::ParameterSet& params() noexcept { return params_; }

  /// z: (batch·n_z) x d_z sample-major; c: (batch·n_z) x d_c, each sample's
  /// tokens attend only to that sample's condition rows.
  ad::Var forward(ad::Tape& tape, ad::Var z, std::span<const std::size_t> t, ad::Var c,
                  const ad::Bindings& bind = {}) const;

  /// The learned null token repeated for `batch` samples.
  ad::Var null_condition(ad::Tape& tape, std::size_t batch, const ad::Bindings& bind = {}) const;
  /// Rows of samples with drop[b] set are replaced by the null token.
  ad::Var drop_condition(ad::Tape& tape, ad::Var c, const std::vector<bool>& drop,
                         const ad::Bindings& bind = {}) const;

 private:
  struct Block {
    ad::ParamId q, k, v, o, w1, b1, w2, b2;
  };
  void bind_layout();

  DenoiserConfig config_;
  ad::ParameterSet params_;
  ad::ParamId in_w_ = 0, in_b_ = 0, pos_ = 0, time_w_ = 0, time_b_ = 0, out_w_ = 0, out_b_ = 0,
              null_ = 0;
  std::vector<Block> blocks_;
};

}  // namespace mrb::diffusion
