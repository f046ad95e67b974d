#include "mrb/harness/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "mrb/ad/optim.hpp"
#include "mrb/ad/rng.hpp"
#include "mrb/harness/align.hpp"
#include "mrb/harness/evaluate.hpp"
#include "mrb/moe/losses.hpp"

namespace mrb::harness {

namespace {

constexpr std::uint64_t kEncoderInit = 1;
constexpr std::uint64_t kGeneratorInit = 2;
constexpr std::uint64_t kStage1Stream = 11;
constexpr std::uint64_t kStage2Stream = 12;
constexpr std::uint64_t kFinetuneStream = 13;
constexpr std::size_t kMovingWindow = 100;

// Epoch-wise reshuffled minibatches.
class Batcher {
 public:
  Batcher(std::size_t n, std::size_t batch, ad::RngStream rng)
      : n_(n), batch_(std::min(batch, n)), rng_(std::move(rng)) {}

  std::vector<std::size_t> next() {
    std::vector<std::size_t> out;
    out.reserve(batch_);
    while (out.size() < batch_) {
      if (pos_ == order_.size()) {
        order_ = rng_.permutation(n_);
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  std::size_t n_, batch_;
  ad::RngStream rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

void check_finite(double loss, const Model& model, const RunConfig& cfg, std::size_t step,
                  const MetricsReport& report, const char* stage) {
  if (std::isfinite(loss)) return;
  throw DivergenceError(std::string(stage) + " loss is non-finite at step " + std::to_string(step),
                        to_checkpoint(model, cfg, "diagnostic", step, report));
}

void log_moving(MetricsReport& report, const std::string& name, std::span<const double> values,
                std::size_t window) {
  const auto means = block_means(values, window);
  for (std::size_t i = 0; i < means.size(); ++i) report.log(name, (i + 1) * window, means[i]);
}

void set_scores(MetricsReport& report, const DecodeScores& s, const std::string& prefix = "") {
  report.set(prefix + "cosine_img", s.cosine_img);
  report.set(prefix + "cosine_text", s.cosine_text);
  report.set(prefix + "mse_img", s.mse_img);
  report.set(prefix + "mse_text", s.mse_text);
}

// Numeric failures inside a step carry the state at that step.
template <class F>
auto guarded(F&& f, const Model& model, const RunConfig& cfg, std::size_t step,
             const MetricsReport& report, const char* stage) {
  try {
    return f();
  } catch (const DivergenceError&) {
    throw;
  } catch (const NumericError& e) {
    throw DivergenceError(std::string(stage) + " step " + std::to_string(step) + ": " + e.what(),
                          to_checkpoint(model, cfg, "diagnostic", step, report));
  }
}

double learning_rate(double base, bool decay, std::size_t step, std::size_t steps) {
  if (!decay) return base;
  const double progress = static_cast<double>(step - 1) / static_cast<double>(steps);
  return 0.5 * base * (1.0 + std::cos(std::numbers::pi * progress));
}

// Shared loop for stage 1 and router finetuning.
TrainResult fit_encoder(const RunConfig& cfg, Model model, const synth::Dataset& train,
                        const synth::Dataset& test, std::size_t steps, std::size_t batch,
                        double lr, bool decay, const std::vector<ad::ParamId>& trainable,
                        ad::RngStream rng, const char* stage) {
  auto& enc = model.encoder;
  auto opt = ad::OptimizerState::for_set(enc.params(), {.lr = lr});
  const std::size_t epoch = (train.size() + batch - 1) / batch;
  const std::size_t eval_every = cfg.stage1.eval_every ? cfg.stage1.eval_every : epoch;
  Batcher batcher(train.size(), batch, std::move(rng));
  MetricsReport report;
  std::vector<double> losses;
  losses.reserve(steps);

  for (std::size_t step = 1; step <= steps; ++step) {
    const auto items = batcher.next();
    ad::Tape tape;
    const auto loss = guarded([&] {
      const auto fwd = enc.forward(tape, tape.constant(voxel_column(train, items)), items.size());
      return moe::stage1_loss(fwd, tape.constant(image_targets(train, items)),
                              tape.constant(text_targets(train, items)), cfg.stage1.weights);
    }, model, cfg, step, report, stage);
    const double total = loss.total.value().item();
    report.log("loss", step, total);
    report.log("loss_mse", step, loss.mse);
    report.log("loss_contrastive", step, loss.contrastive);
    report.log("loss_balance", step, loss.balance);
    check_finite(total, model, cfg, step, report, stage);
    losses.push_back(total);
    const auto grads = tape.backward(loss.total).for_set(enc.params());
    opt.config.lr = learning_rate(lr, decay, step, steps);
    ad::adam_step(enc.params(), grads, opt, trainable);
    if (step % eval_every == 0 || step == steps) {
      const auto s = evaluate(enc, test);
      report.log("heldout_cosine_img", step, s.cosine_img);
      report.log("heldout_cosine_text", step, s.cosine_text);
    }
  }
  log_moving(report, "loss_ma100", losses, kMovingWindow);
  const auto ma = block_means(losses, kMovingWindow);
  report.set("loss_ma100_non_increasing", non_increasing(ma) ? 1.0 : 0.0);
  report.set("steps", static_cast<double>(steps));
  set_scores(report, evaluate(enc, test));
  return {std::move(model), std::move(report)};
}

}  // namespace

std::size_t Model::parameter_count() const {
  std::size_t n = encoder.params().scalar_count();
  if (generator) {
    n += generator->time_router().params().scalar_count();
    n += generator->space_router().params().scalar_count();
    n += generator->denoiser().params().scalar_count();
  }
  return n;
}

Model init_model(const RunConfig& cfg) {
  cfg.validate();
  return {moe::MoeEncoder(cfg.model, ad::derive_stream(cfg.seed, kEncoderInit)), std::nullopt};
}

Checkpoint to_checkpoint(const Model& model, const RunConfig& cfg, std::string kind,
                         std::uint64_t step, const MetricsReport& report) {
  Checkpoint ckpt;
  ckpt.kind = std::move(kind);
  ckpt.step = step;
  ckpt.config = cfg.to_json();
  ckpt.metrics = report.summary;
  ckpt.groups.emplace_back("encoder", model.encoder.params());
  if (model.generator) {
    ckpt.groups.emplace_back("time", model.generator->time_router().params());
    ckpt.groups.emplace_back("space", model.generator->space_router().params());
    ckpt.groups.emplace_back("denoiser", model.generator->denoiser().params());
  }
  return ckpt;
}

RunConfig config_of(const Checkpoint& ckpt) {
  if (ckpt.config.empty()) throw FormatError(FormatError::Kind::kCorrupt, "checkpoint has no config");
  return RunConfig::from_json(ckpt.config);
}

Model from_checkpoint(const Checkpoint& ckpt) {
  const RunConfig cfg = config_of(ckpt);
  Model model{moe::MoeEncoder(cfg.model, ckpt.group("encoder")), std::nullopt};
  if (ckpt.has_group("time")) {
    model.generator.emplace(cfg.generator, ckpt.group("time"), ckpt.group("space"),
                            ckpt.group("denoiser"));
  }
  return model;
}

TrainResult train_stage1(const RunConfig& cfg, const RunData& data) {
  Model model = init_model(cfg);
  auto trainable = iota(model.encoder.params().size());
  auto result = fit_encoder(cfg, std::move(model), data.train, data.test, cfg.stage1.steps,
                            cfg.stage1.batch, cfg.stage1.lr, cfg.stage1.cosine_decay, trainable,
                            ad::RngStream(cfg.seed, kStage1Stream), "stage 1");
  return result;
}

TrainResult train_stage2(const RunConfig& cfg, const Model& base, const RunData& data) {
  cfg.validate();
  Model model{base.encoder, base.generator};
  if (!model.generator) model.generator.emplace(cfg.generator, ad::derive_stream(cfg.seed, kGeneratorInit));
  auto& gen = *model.generator;
  const double kl_weight = cfg.generator.time.kl_weight;

  const auto tables = expert_tables(model.encoder, data.train);
  auto& time_p = gen.time_router().params();
  auto& space_p = gen.space_router().params();
  auto& den_p = gen.denoiser().params();
  const ad::AdamConfig adam{.lr = cfg.stage2.lr};
  auto time_opt = ad::OptimizerState::for_set(time_p, adam);
  auto space_opt = ad::OptimizerState::for_set(space_p, adam);
  auto den_opt = ad::OptimizerState::for_set(den_p, adam);

  ad::RngStream rng(cfg.seed, kStage2Stream);
  Batcher batcher(data.train.size(), cfg.stage2.batch, ad::RngStream(cfg.seed, kStage2Stream + 100));
  MetricsReport report;
  std::vector<double> denoise, kl;
  const std::size_t steps = cfg.stage2.steps;

  for (std::size_t step = 1; step <= steps; ++step) {
    const auto items = batcher.next();
    std::vector<const router::ExpertTable*> ptrs;
    for (std::size_t i : items) ptrs.push_back(&tables[i]);
    const auto z0 = latents(data.world, data.train, items);
    ad::Tape tape;
    const auto loss = guarded([&] { return diffusion::stage2_loss(tape, gen, ptrs, z0, rng, kl_weight); },
                              model, cfg, step, report, "stage 2");
    const double total = loss.total.value().item();
    report.log("loss", step, total);
    report.log("loss_denoise", step, loss.denoise);
    if (kl_weight > 0.0) report.log("loss_kl", step, loss.kl);
    check_finite(total, model, cfg, step, report, "stage 2");
    denoise.push_back(loss.denoise);
    kl.push_back(loss.kl);
    const auto grads = tape.backward(loss.total);
    const double lr = learning_rate(cfg.stage2.lr, cfg.stage2.cosine_decay, step, steps);
    time_opt.config.lr = space_opt.config.lr = den_opt.config.lr = lr;
    ad::adam_step(time_p, grads.for_set(time_p), time_opt);
    ad::adam_step(space_p, grads.for_set(space_p), space_opt);
    ad::adam_step(den_p, grads.for_set(den_p), den_opt);
  }
  const std::size_t window = std::max<std::size_t>(1, std::min(cfg.stage2.log_every, steps));
  log_moving(report, "denoise_ma", denoise, window);
  log_moving(report, "kl_ma", kl, window);
  const auto dm = block_means(denoise, window);
  const auto km = block_means(kl, window);
  report.set("denoise_initial", dm.front());
  report.set("denoise_final", dm.back());
  report.set("kl_initial", km.front());
  report.set("kl_final", km.back());
  report.set("steps", static_cast<double>(steps));
  return {std::move(model), std::move(report)};
}

TrainResult finetune_routers(const RunConfig& cfg, const Model& base, const RunData& data,
                             double fraction, const synth::Dataset* source) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("finetune fraction must be in (0, 1]");
  const auto n = static_cast<std::size_t>(
      std::ceil(fraction * static_cast<double>(data.train.size()) - 1e-9));
  if (n == 0) throw ConfigError("finetune subset is empty");
  const auto subset = data.train.head(n);

  Model model{base.encoder, base.generator};
  const auto trainable = model.encoder.router_param_ids();
  const auto pre = evaluate(model.encoder, data.test);
  std::optional<DecodeScores> aligned;
  if (cfg.finetune.align) {
    if (source == nullptr) throw ConfigError("finetune.align needs the source subject's data");
    align_voxel_embedding(model.encoder, match_voxels(*source, subset));
    aligned = evaluate(model.encoder, data.test);
  }
  auto result = fit_encoder(cfg, std::move(model), subset, data.test, cfg.finetune.steps,
                            cfg.finetune.batch, cfg.finetune.lr, cfg.finetune.cosine_decay, trainable,
                            ad::RngStream(cfg.seed, kFinetuneStream), "finetune");
  auto& r = result.report;
  set_scores(r, pre, "pre_");
  if (aligned) set_scores(r, *aligned, "aligned_");
  r.set("post_cosine_img", r.at("cosine_img"));
  r.set("fraction", fraction);
  r.set("subset_size", static_cast<double>(n));
  const auto trainable_count = result.model.encoder.params().scalar_count(trainable);
  r.set("trainable_params", static_cast<double>(trainable_count));
  r.set("total_params", static_cast<double>(result.model.parameter_count()));
  r.set("trainable_fraction",
        static_cast<double>(trainable_count) / static_cast<double>(result.model.parameter_count()));
  return result;
}

std::vector<double> block_means(std::span<const double> values, std::size_t window) {
  if (window == 0) throw ConfigError("block_means: window must be >= 1");
  std::vector<double> out;
  for (std::size_t begin = 0; begin + window <= values.size(); begin += window) {
    double s = 0.0;
    for (std::size_t i = begin; i < begin + window; ++i) s += values[i];
    out.push_back(s / static_cast<double>(window));
  }
  return out;
}

bool non_increasing(std::span<const double> values) {
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[i - 1]) return false;
  return true;
}

}  // namespace mrb::harness
