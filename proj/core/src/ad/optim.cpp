#include "mrb/ad/optim.hpp"

#include <cmath>

#include "mrb/error.hpp"

namespace mrb::ad {

OptimizerState OptimizerState::for_set(const ParameterSet& params, AdamConfig config) {
  OptimizerState s;
  s.config = config;
  for (const Tensor& v : params.values()) {
    s.first.emplace_back(v.shape(), std::vector<double>(v.size(), 0.0));
    s.second.emplace_back(v.shape(), std::vector<double>(v.size(), 0.0));
  }
  return s;
}

void adam_step(ParameterSet& params, const std::vector<Tensor>& grads, OptimizerState& state,
               const std::vector<ParamId>& trainable) {
  if (grads.size() != params.size() || state.first.size() != params.size()) {
    throw ShapeError("adam_step: expected " + std::to_string(params.size()) +
                     " gradients/moments, got " + std::to_string(grads.size()));
  }
  std::vector<ParamId> ids = trainable;
  if (ids.empty()) {
    for (ParamId id = 0; id < params.size(); ++id) ids.push_back(id);
  }
  for (ParamId id : ids) {
    if (!grads[id].same_shape(params.value(id)) || grads[id].size() != params.value(id).size()) {
      throw ShapeError("adam_step: gradient " + grads[id].shape_string() + " for parameter '" +
                       params.name(id) + "' " + params.value(id).shape_string());
    }
  }

  const AdamConfig& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (ParamId id : ids) {
    auto p = params.value(id).data();
    auto g = grads[id].data();
    auto m = state.first[id].data();
    auto v = state.second[id].data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      p[i] -= c.lr * m_hat / (std::sqrt(v_hat) + c.eps);
    }
  }
}

}  // namespace mrb::ad
