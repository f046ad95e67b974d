#pragma once

#include <span>

#include "mrb/ad/ops.hpp"
#include "mrb/moe/encoder.hpp"

namespace mrb::moe {

/// Σ_l Σ_j (mean_i P_ij − 1/e_l)² over the per-level routing matrices.
ad::Var load_balance_loss(std::span<const ad::Var> probabilities);

/// Soft-target bidirectional InfoNCE. Both inputs are row-normalized first.
/// tau_target == 0 means one-hot targets on the diagonal.
ad::Var contrastive_loss(ad::Var pred, ad::Var target, double tau = 0.1, double tau_target = 0.1);

/// Mean squared error over all entries.
ad::Var mse_loss(ad::Var pred, ad::Var target);

struct Stage1Weights {
  double mse = 1.0;
  double contrastive = 0.33;
  double balance = 0.1;
  double tau = 0.1;
  double tau_target = 0.1;
};

struct Stage1Loss {
  ad::Var total;
  double mse = 0.0;          // img + text
  double contrastive = 0.0;  // img + text
  double balance = 0.0;
};

Stage1Loss stage1_loss(ad::Var pred_img, ad::Var pred_text, ad::Var gt_img, ad::Var gt_text,
                       std::span<const ad::Var> probabilities, const Stage1Weights& w = {});

inline Stage1Loss stage1_loss(const EncoderForward& fwd, ad::Var gt_img, ad::Var gt_text,
                              const Stage1Weights& w = {}) {
  return stage1_loss(fwd.pred_img, fwd.pred_text, gt_img, gt_text, fwd.probabilities, w);
}

/// (Pred_img, Pred_text): per-level expert mean, then mean over levels.
std::pair<std::vector<double>, std::vector<double>> aggregate(const ExpertEmbeddingSet& set);

}  // namespace mrb::moe
