#include "mrb/diffusion/generator.hpp"

#include <string>

#include "mrb/error.hpp"

namespace mrb::diffusion {

namespace {

ad::Tensor stack(std::span<const ad::Tensor> parts, std::size_t rows, std::size_t cols) {
  ad::Tensor out(parts.size() * rows, cols);
  for (std::size_t b = 0; b < parts.size(); ++b) {
    if (parts[b].rows() != rows || parts[b].cols() != cols) {
      throw ShapeError("latent is " + parts[b].shape_string() + ", expected " +
                       ad::shape_string(rows, cols));
    }
    std::copy(parts[b].data().begin(), parts[b].data().end(),
              out.data().begin() + static_cast<std::ptrdiff_t>(b * rows * cols));
  }
  return out;
}

std::vector<ad::Tensor> unstack(const ad::Tensor& z, std::size_t batch, std::size_t rows) {
  std::vector<ad::Tensor> out;
  const std::size_t block = rows * z.cols();
  for (std::size_t b = 0; b < batch; ++b) {
    ad::Tensor one(rows, z.cols());
    std::copy(z.data().begin() + static_cast<std::ptrdiff_t>(b * block),
              z.data().begin() + static_cast<std::ptrdiff_t>((b + 1) * block), one.data().begin());
    out.push_back(std::move(one));
  }
  return out;
}

}  // namespace

void GeneratorConfig::validate() const {
  time.validate();
  space.validate();
  denoiser.validate();
  schedule.validate();
  if (space.latent_width != denoiser.width) {
    throw ConfigError("space router latent width must equal the denoiser token width");
  }
  if (space.cond != denoiser.cond) {
    throw ConfigError("space router output width must equal the denoiser condition width");
  }
  if (denoiser.steps != schedule.steps) {
    throw ConfigError("denoiser and schedule disagree on T");
  }
  if (!(cond_dropout >= 0.0 && cond_dropout <= 1.0)) {
    throw ConfigError("condition dropout must be in [0, 1]");
  }
}

Generator::Generator(GeneratorConfig config, std::uint64_t seed)
    : config_((config.validate(), config)),
      schedule_(NoiseSchedule::linear(config_.schedule)),
      time_(config_.time, config_.schedule.steps, seed),
      space_(config_.space, seed),
      denoiser_(config_.denoiser, seed) {}

Generator::Generator(GeneratorConfig config, ad::ParameterSet time, ad::ParameterSet space,
                     ad::ParameterSet denoiser)
    : config_((config.validate(), config)),
      schedule_(NoiseSchedule::linear(config_.schedule)),
      time_(config_.time, config_.schedule.steps, std::move(time)),
      space_(config_.space, std::move(space)),
      denoiser_(config_.denoiser, std::move(denoiser)) {}

Generator::Conditioning Generator::condition(ad::Tape& tape, ad::Var z_t,
                                             std::span<const router::ExpertTable* const> tables,
                                             std::span<const std::size_t> t,
                                             const GeneratorBindings& bind) const {
  Conditioning out;
  out.p_t = time_.weights(tape, t, bind.time);
  out.selected = router::select_embeddings(tape, tables, out.p_t, config_.time.mode, t,
                                           config_.schedule.steps);
  out.attention = space_.condition(tape, z_t, config_.denoiser.tokens, out.selected.rows,
                                   out.selected.counts, bind.space);
  out.condition = out.attention.condition;
  return out;
}

Stage2Loss stage2_loss(ad::Tape& tape, const Generator& gen,
                       std::span<const router::ExpertTable* const> tables,
                       std::span<const ad::Tensor> z0, ad::RngStream& rng, double kl_weight,
                       const GeneratorBindings& bind) {
  const std::size_t batch = tables.size();
  if (batch == 0 || z0.size() != batch) throw ShapeError("stage2_loss: batch size mismatch");
  if (!(kl_weight >= 0.0)) throw ConfigError("stage2_loss: KL weight must be >= 0");
  const auto& cfg = gen.config();
  const std::size_t n = cfg.denoiser.tokens;
  const std::size_t d = cfg.denoiser.width;
  const std::size_t steps = cfg.schedule.steps;

  Stage2Loss out;
  out.t.resize(batch);
  std::vector<ad::Tensor> noisy, noise;
  std::vector<bool> drop(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    out.t[b] = rng.below(steps);
    ad::Tensor eps(n, d);
    for (double& v : eps.data()) v = rng.normal();
    drop[b] = rng.uniform() < cfg.cond_dropout;
    noisy.push_back(forward_noise(z0[b], out.t[b], eps, gen.schedule()));
    noise.push_back(std::move(eps));
  }
  const ad::Var z_t = tape.constant(stack(noisy, n, d));
  const ad::Var eps = tape.constant(stack(noise, n, d));

  const auto cond = gen.condition(tape, z_t, tables, out.t, bind);
  const ad::Var c = gen.denoiser().drop_condition(tape, cond.condition, drop, bind.denoiser);
  const ad::Var eps_hat = gen.denoiser().forward(tape, z_t, out.t, c, bind.denoiser);
  const ad::Var diff = ad::sub(eps, eps_hat);
  const ad::Var denoise = ad::scale(ad::sum(ad::mul(diff, diff)), 1.0 / static_cast<double>(batch));
  const ad::Var kl = router::kl_penalty(cond.p_t, gen.time_router().guide(out.t));
  out.total = ad::add(denoise, ad::scale(kl, kl_weight));
  out.denoise = denoise.value().item();
  out.kl = kl.value().item();
  out.p_t = cond.p_t;
  return out;
}

Stage2Loss stage2_loss(ad::Tape& tape, const Generator& gen, const moe::MoeEncoder& encoder,
                       const ad::Tensor& voxels, std::span<const ad::Tensor> z0,
                       ad::RngStream& rng, double kl_weight, const GeneratorBindings& bind) {
  const auto fwd = encoder.forward(tape, tape.constant(voxels), z0.size(),
                                   {.binding = ad::Binding::kFrozen});
  const auto tables = router::expert_tables(fwd);
  std::vector<const router::ExpertTable*> ptrs;
  for (const auto& t : tables) ptrs.push_back(&t);
  return stage2_loss(tape, gen, ptrs, z0, rng, kl_weight, bind);
}

void GenConfig::validate(std::size_t schedule_steps) const {
  if (steps == 0 || steps > schedule_steps) {
    throw ConfigError("sampling steps must be in [1, " + std::to_string(schedule_steps) + "]");
  }
  if (!(guidance >= 0.0)) throw ConfigError("guidance scale must be >= 0");
}

std::vector<ad::Tensor> sample(const Generator& gen,
                               std::span<const router::ExpertTable* const> tables,
                               std::span<const std::uint64_t> ids, const GenConfig& cfg,
                               SampleTrace* trace) {
  const auto& gcfg = gen.config();
  cfg.validate(gcfg.schedule.steps);
  const std::size_t batch = ids.size();
  if (batch == 0) throw ShapeError("sample: empty batch");
  const bool conditional = cfg.guidance != 0.0;
  const bool unconditional = cfg.guidance != 1.0;
  if (conditional && tables.size() != batch) throw ShapeError("sample: one table per item");
  const std::size_t n = gcfg.denoiser.tokens;
  const std::size_t d = gcfg.denoiser.width;
  const auto bind = GeneratorBindings::frozen();

  std::vector<ad::RngStream> streams;
  std::vector<ad::Tensor> init;
  for (std::uint64_t id : ids) {
    streams.emplace_back(cfg.seed, id);
    ad::Tensor z(n, d);
    for (double& v : z.data()) v = streams.back().normal();
    init.push_back(std::move(z));
  }
  ad::Tensor z = stack(init, n, d);

  const auto timesteps = sampling_timesteps(gcfg.schedule.steps, cfg.steps);
  for (std::size_t k = 0; k < timesteps.size(); ++k) {
    const std::size_t t = timesteps[k];
    const std::vector<std::size_t> ts(batch, t);
    ad::Tape tape;
    const ad::Var zv = tape.constant(z);
    ad::Tensor eps_c, eps_u;
    if (conditional) {
      const auto cond = gen.condition(tape, zv, tables, ts, bind);
      eps_c = gen.denoiser().forward(tape, zv, ts, cond.condition, bind.denoiser).value();
      if (trace) {
        SampleTrace::Step step{t, cond.p_t.value(), cond.attention.attention,
                               cond.selected.counts, {}};
        for (const auto& sel : cond.selected.selections) step.levels.push_back(sel.level);
        trace->steps.push_back(std::move(step));
      }
    }
    if (unconditional) {
      const ad::Var null = gen.denoiser().null_condition(tape, batch, bind.denoiser);
      eps_u = gen.denoiser().forward(tape, zv, ts, null, bind.denoiser).value();
    }
    const ad::Tensor eps_hat = !conditional     ? eps_u
                               : !unconditional ? eps_c
                                                : guided_noise(eps_u, eps_c, cfg.guidance);
    const bool last = k + 1 == timesteps.size();
    const double ab_cur = gen.schedule().alpha_bar_at(t);
    const double ab_prev = last ? 1.0 : gen.schedule().alpha_bar_at(timesteps[k + 1]);
    if (last) {
      z = ancestral_step(z, eps_hat, ab_cur, ab_prev, nullptr);
    } else {
      ad::Tensor xi(batch * n, d);
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < n * d; ++i) xi[b * n * d + i] = streams[b].normal();
      z = ancestral_step(z, eps_hat, ab_cur, ab_prev, &xi);
    }
  }
  return unstack(z, batch, n);
}

}  // namespace mrb::diffusion
