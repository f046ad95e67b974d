#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "mrb/ad/rng.hpp"
#include "mrb/diffusion/generator.hpp"
#include "mrb/harness/data.hpp"
#include "mrb/harness/metrics.hpp"
#include "mrb/moe/encoder.hpp"

namespace mrb::harness {

struct DecodeScores {
  double cosine_img = 0.0;  // mean per-item cosine
  double cosine_text = 0.0;
  double mse_img = 0.0;
  double mse_text = 0.0;
};

DecodeScores score(const Predictions& pred, const synth::Dataset& data);
DecodeScores evaluate(const moe::MoeEncoder& encoder, const synth::Dataset& data);

/// Closed-form ridge regression x → y_img, y_text fit on `train`, scored on `test`.
DecodeScores ridge_oracle(const synth::Dataset& train, const synth::Dataset& test,
                          double lambda = 1e-3);

/// Rank-r principal subspace (uncentered) of `train_pred`; test predictions
/// projected through it. Rank 0 scores cosine 0.
struct BottleneckPoint {
  std::size_t rank = 0;
  double cosine_img = 0.0;
};
std::vector<BottleneckPoint> bottleneck_curve(const Predictions& train_pred,
                                              const Predictions& test_pred,
                                              const synth::Dataset& test,
                                              std::span<const std::size_t> ranks);

/// Readout value at x; writes ∂readout/∂x into `grad`.
using Readout = std::function<double(std::span<const double> x, std::span<double> grad)>;

/// Expected gradients: mean over baselines b and stratified α ~ U(0, 1) of
/// (x − b) ⊙ ∇readout(b + α(x − b)). Draws α from `rng`.
std::vector<double> expected_gradients(const Readout& readout, std::span<const double> x,
                                       std::span<const std::vector<double>> baselines,
                                       std::size_t n_interp, ad::RngStream& rng);

/// cosine(Pred_img(x), y_img) and its input gradient through the encoder.
Readout encoder_readout(const moe::MoeEncoder& encoder, std::span<const double> y_img);

/// Same readout with every Top-K set held at the assignment of `anchor`, so
/// the function is smooth in x.
Readout frozen_routing_readout(const moe::MoeEncoder& encoder, std::span<const double> y_img,
                               std::span<const double> anchor);

/// Baselines: `n` dataset samples drawn with `rng` (without replacement).
std::vector<std::vector<double>> draw_baselines(const synth::Dataset& data, std::size_t n,
                                                ad::RngStream& rng);

struct RoutingStats {
  /// [level][expert] mean attention share within the level; each level sums to 1.
  std::vector<std::vector<double>> utilization;
  /// T x L, row t = mean P_T at timestep t.
  ad::Tensor time_preference;
  /// E_{P_T}[level] per timestep.
  std::vector<double> expected_level;
  double spearman_level_time = 0.0;
};

RoutingStats routing_stats(const diffusion::Generator& gen,
                           std::span<const router::ExpertTable> tables,
                           const diffusion::GenConfig& sampling,
                           diffusion::SampleTrace* trace = nullptr);

/// routing_trace.csv rows: item,t,kind,row,col,value for P_T and attention.
/// Item b of the trace is labelled ids[b].
std::string routing_trace_csv(const diffusion::SampleTrace& trace,
                              std::span<const std::uint64_t> ids, std::size_t tokens);

/// Final-level co-assignment frequency over samples, cut into `groups`
/// clusters by average linkage.
std::vector<std::size_t> consensus_partition(const moe::MoeEncoder& encoder,
                                             const synth::Dataset& data, std::size_t groups);

struct PartitionScore {
  double rand_index = 0.0;         // consensus vs planted
  double mean_sample_rand = 0.0;   // per-sample final-level assignment vs planted
  double chance_mean = 0.0;        // random balanced partitions vs planted
  double chance_sd = 0.0;
};

PartitionScore partition_recovery(const moe::MoeEncoder& encoder, const RunData& data,
                                  std::size_t random_partitions, std::uint64_t seed);

struct SamplerScore {
  double mse_conditional = 0.0;
  double mse_unconditional = 0.0;
};

/// Mean per-item MSE of sampled ẑ₀ against the stimulus latent, with guidance
/// `sampling.guidance` and with guidance 0.
SamplerScore sampler_eval(const diffusion::Generator& gen, const moe::MoeEncoder& encoder,
                          const RunData& data, std::size_t items,
                          const diffusion::GenConfig& sampling, std::size_t batch);

}  // namespace mrb::harness
