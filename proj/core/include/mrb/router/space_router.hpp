#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mrb/ad/binding.hpp"
#include "mrb/ad/ops.hpp"
#include "mrb/moe/encoder.hpp"
#include "mrb/router/time_router.hpp"

namespace mrb::router {

struct SpaceRouterConfig {
  std::size_t latent_width = 16;  // d_z
  std::size_t embed = 32;         // D
  std::size_t attn = 16;          // d_a
  std::size_t cond = 16;          // d_c

  void validate() const;
};

struct SpaceAttention {
  ad::Var condition;  // (batch·n_z) x d_c
  /// (batch·n_z) x max m: each token's weights over its own sample's rows, zero-padded.
  ad::Tensor attention;
};

/// Cross-attention from latent tokens (queries) to selected expert embeddings.
class SpaceRouter {
 public:
  SpaceRouter(SpaceRouterConfig config, std::uint64_t seed);
  explicit SpaceRouter(SpaceRouterConfig config, ad::ParameterSet params);

  const SpaceRouterConfig& config() const noexcept { return config_; }
  const ad::ParameterSet& params() const noexcept { return params_; }
  ad::ParameterSet& params() noexcept { return params_; }

  /// z: n_z x d_z, e: m x D.
  SpaceAttention condition(ad::Tape& tape, ad::Var z, ad::Var e,
                           const ad::Bindings& bind = {}) const;
  /// Batched: z is (batch·tokens) x d_z sample-major; e stacks each sample's
  /// counts[b] rows. Tokens only attend to their own sample's rows.
  SpaceAttention condition(ad::Tape& tape, ad::Var z, std::size_t tokens, ad::Var e,
                           std::span<const std::size_t> counts,
                           const ad::Bindings& bind = {}) const;

 private:
  void bind_layout();

  SpaceRouterConfig config_;
  ad::ParameterSet params_;
  ad::ParamId query_ = 0, key_ = 0, value_ = 0;
};

/// One sample's expert embeddings as rows: level-major, image rows then text rows per level.
struct ExpertTable {
  ad::Tensor rows;
  std::vector<std::size_t> level_of_row;
  std::size_t levels = 0;
};

ExpertTable expert_table(const moe::ExpertEmbeddingSet& set);
/// One table per sample of a batched encoder pass (values only).
std::vector<ExpertTable> expert_tables(const moe::EncoderForward& fwd);

struct SelectedEmbeddings {
  ad::Var rows;  // stacked per sample
  std::vector<std::size_t> counts;
  std::vector<LevelSelection> selections;
};

/// Builds E_sel for a batch. Soft mode scales every row by P_T of its level
/// (differentiable in `p_t`); hard/fixed keep only the selected level's rows.
SelectedEmbeddings select_embeddings(ad::Tape& tape, std::span<const ExpertTable* const> tables,
                                     ad::Var p_t, LevelMode mode,
                                     std::span<const std::size_t> t, std::size_t steps);

}  // namespace mrb::router
