#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "mrb/ad/parameters.hpp"
#include "mrb/ad/tensor.hpp"

namespace mrb::ad {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Moment accumulators for one ParameterSet.
struct OptimizerState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<Tensor> first;
  std::vector<Tensor> second;

  static OptimizerState for_set(const ParameterSet& params, AdamConfig config = {});
};

/// Bias-corrected Adam update applied in place.
///
/// `grads` is indexed like `params`. When `trainable` is non-empty only the
/// listed ids are touched; the step counter advances once per call.
void adam_step(ParameterSet& params, const std::vector<Tensor>& grads, OptimizerState& state,
               const std::vector<ParamId>& trainable = {});

}  // namespace mrb::ad
