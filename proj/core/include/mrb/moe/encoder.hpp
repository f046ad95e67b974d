#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mrb/ad/binding.hpp"
#include "mrb/ad/ops.hpp"
#include "mrb/ad/parameters.hpp"
#include "mrb/ad/tape.hpp"
#include "mrb/moe/assign.hpp"
#include "mrb/moe/config.hpp"

namespace mrb::moe {

/// Voxel routing of one sample through every level.
struct HierarchyAssignment {
  /// [level][expert] voxel indices, ascending.
  std::vector<std::vector<std::vector<std::size_t>>> sets;
  /// [level][expert] the same voxels in greedy routing order (the order experts read them).
  std::vector<ExpertVoxels> order;
  /// [level] v x e_l soft routing probabilities; zero outside each voxel's child block.
  std::vector<ad::Tensor> probabilities;
};

struct ExpertEmbedding {
  std::vector<double> img;
  std::vector<double> text;
};

/// [level][expert] unit-norm target-space embeddings of one sample.
using ExpertEmbeddingSet = std::vector<std::vector<ExpertEmbedding>>;

/// Parameter ids of one expert.
struct ExpertParamIds {
  ad::ParamId w1, b1, w2, b2;
  ad::ParamId img_w, img_b, text_w, text_b;
};

using ad::Binding;

struct EncodeOptions {
  Binding binding = Binding::kTrainable;
  /// When set, routing is taken from these assignments (one per sample)
  /// instead of being recomputed from the router probabilities.
  const std::vector<HierarchyAssignment>* fixed_routing = nullptr;
  /// When set, these tape nodes (indexed by ParamId) stand in for the stored
  /// parameters and `binding` is ignored.
  const std::vector<ad::Var>* bound_params = nullptr;
};

/// Batched encoder output. Vars live on the tape passed to forward().
struct EncoderForward {
  std::size_t batch = 0;
  /// [level] (batch·v) x e_l soft routing probabilities.
  std::vector<ad::Var> probabilities;
  /// [level][expert] batch x D, unit rows.
  std::vector<std::vector<ad::Var>> img;
  std::vector<std::vector<ad::Var>> text;
  /// Level-then-expert average, batch x D.
  ad::Var pred_img;
  ad::Var pred_text;
  std::vector<HierarchyAssignment> routing;
};

/// Hierarchical mixture-of-experts voxel encoder.
///
/// Level 0 routes every voxel among the root experts using features
/// [F_i, U_i]; each expert's per-voxel outputs become the features its children
/// route on, and the children split exactly the parent's voxels.
class MoeEncoder {
 public:
  MoeEncoder(HierarchyConfig config, std::uint64_t seed);
  /// Adopts existing parameters (e.g. from a checkpoint); names must match the layout.
  MoeEncoder(HierarchyConfig config, ad::ParameterSet params);

  const HierarchyConfig& config() const noexcept { return config_; }
  const ad::ParameterSet& params() const noexcept { return params_; }
  ad::ParameterSet& params() noexcept { return params_; }

  ad::ParamId voxel_embedding_id() const noexcept { return voxel_embedding_; }
  ad::ParamId router_id(std::size_t level) const { return routers_.at(level); }
  const ExpertParamIds& expert_ids(std::size_t level, std::size_t expert) const {
    return experts_.at(level).at(expert);
  }
  /// U and every W_r.
  std::vector<ad::ParamId> router_param_ids() const;
  /// Everything except U and W_r.
  std::vector<ad::ParamId> expert_param_ids() const;

  /// `voxels` is a (batch·v) x 1 column of activities, sample-major.
  EncoderForward forward(ad::Tape& tape, ad::Var voxels, std::size_t batch,
                         const EncodeOptions& options = {}) const;

  /// Single-sample convenience wrapper, no gradients.
  std::pair<ExpertEmbeddingSet, HierarchyAssignment> encode(std::span<const double> voxels) const;

 private:
  void bind_layout();
  ad::Var bind(ad::Tape& tape, ad::ParamId id, const EncodeOptions& options) const;

  HierarchyConfig config_;
  ad::ParameterSet params_;
  ad::ParamId voxel_embedding_ = 0;
  std::vector<ad::ParamId> routers_;
  std::vector<std::vector<ExpertParamIds>> experts_;
};

/// Row i = [F_i, U_i].
ad::Tensor voxel_features(std::span<const double> voxels, const ad::Tensor& voxel_embedding);

/// A = X·W_r, P = softmax_rows(A).
std::pair<ad::Tensor, ad::Tensor> router_affinity(const ad::Tensor& features,
                                                  const ad::Tensor& router_weight);

/// Two-layer MLP over rows (activation after the first layer), mean-pool, then
/// per-modality affine heads, L2-normalized.
struct ExpertOutput {
  ad::Tensor per_voxel;  // k x d_f
  std::vector<double> img;
  std::vector<double> text;
};
ExpertOutput expert_forward(const ad::Tensor& inputs, const ad::ParameterSet& params,
                            const ExpertParamIds& ids, Activation activation = Activation::kGelu);

}  // namespace mrb::moe
