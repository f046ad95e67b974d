#include "mrb/diffusion/schedule.hpp"

#include <cmath>
#include <string>

#include "mrb/error.hpp"

namespace mrb::diffusion {

void ScheduleConfig::validate() const {
  if (steps == 0) throw ConfigError("schedule needs T >= 1");
  if (!(beta_min > 0.0) || !(beta_max < 1.0) || beta_min > beta_max) {
    throw ConfigError("schedule needs 0 < beta_min <= beta_max < 1");
  }
}

NoiseSchedule NoiseSchedule::linear(const ScheduleConfig& config) {
  config.validate();
  NoiseSchedule s;
  const std::size_t n = config.steps;
  double prod = 1.0;
  for (std::size_t t = 0; t < n; ++t) {
    const double frac = n > 1 ? static_cast<double>(t) / static_cast<double>(n - 1) : 0.0;
    const double b = config.beta_min + (config.beta_max - config.beta_min) * frac;
    prod *= 1.0 - b;
    s.beta.push_back(b);
    s.alpha.push_back(1.0 - b);
    s.alpha_bar.push_back(prod);
  }
  return s;
}

double NoiseSchedule::alpha_bar_at(std::size_t t) const {
  if (t >= steps()) {
    throw ConfigError("timestep " + std::to_string(t) + " outside [0, " +
                      std::to_string(steps()) + ")");
  }
  return alpha_bar[t];
}

ad::Tensor forward_noise(const ad::Tensor& z0, const ad::Tensor& eps, double alpha_bar) {
  if (!z0.same_shape(eps)) {
    throw ShapeError("forward_noise: z0 " + z0.shape_string() + " vs eps " + eps.shape_string());
  }
  if (!(alpha_bar >= 0.0 && alpha_bar <= 1.0)) throw ConfigError("forward_noise: ᾱ outside [0, 1]");
  const double a = std::sqrt(alpha_bar);
  const double b = std::sqrt(1.0 - alpha_bar);
  ad::Tensor out = z0;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * z0[i] + b * eps[i];
  return out;
}

ad::Tensor forward_noise(const ad::Tensor& z0, std::size_t t, const ad::Tensor& eps,
                         const NoiseSchedule& schedule) {
  return forward_noise(z0, eps, schedule.alpha_bar_at(t));
}

ad::Tensor guided_noise(const ad::Tensor& uncond, const ad::Tensor& cond, double scale) {
  if (!uncond.same_shape(cond)) throw ShapeError("guided_noise: shape mismatch");
  ad::Tensor out = uncond;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = uncond[i] + scale * (cond[i] - uncond[i]);
  return out;
}

ad::Tensor ancestral_step(const ad::Tensor& z, const ad::Tensor& eps_hat, double alpha_bar_cur,
                          double alpha_bar_prev, const ad::Tensor* xi) {
  if (!z.same_shape(eps_hat) || (xi && !xi->same_shape(z))) {
    throw ShapeError("ancestral_step: shape mismatch");
  }
  const double alpha = alpha_bar_cur / alpha_bar_prev;
  const double beta = 1.0 - alpha;
  const double coef = beta / std::sqrt(1.0 - alpha_bar_cur);
  const double inv_sqrt_alpha = 1.0 / std::sqrt(alpha);
  const double sigma = std::sqrt(beta * (1.0 - alpha_bar_prev) / (1.0 - alpha_bar_cur));
  ad::Tensor out = z;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = (z[i] - coef * eps_hat[i]) * inv_sqrt_alpha;
    if (xi) out[i] += sigma * (*xi)[i];
  }
  return out;
}

std::vector<std::size_t> sampling_timesteps(std::size_t steps, std::size_t count) {
  if (count == 0 || count > steps) {
    throw ConfigError("sampling steps must be in [1, " + std::to_string(steps) + "]");
  }
  std::vector<std::size_t> out;
  for (std::size_t k = count; k-- > 0;) {
    const std::size_t t =
        count > 1 ? (k * (steps - 1) + (count - 1) / 2) / (count - 1) : steps - 1;
    out.push_back(t);
  }
  return out;
}

}  // namespace mrb::diffusion
