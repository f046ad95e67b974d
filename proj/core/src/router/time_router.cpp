#include "mrb/router/time_router.hpp"

#include <algorithm>
#include <cmath>

#include "mrb/ad/rng.hpp"
#include "mrb/error.hpp"

namespace mrb::router {

namespace {

constexpr std::uint64_t kInitStream = 0x54'52'54;  // "TRT"

void check_step(std::size_t t, std::size_t steps) {
  if (t >= steps) {
    throw ConfigError("timestep " + std::to_string(t) + " outside [0, " + std::to_string(steps) +
                      ")");
  }
}

}  // namespace

std::string to_string(LevelMode mode) {
  switch (mode) {
    case LevelMode::kSoft: return "soft";
    case LevelMode::kHard: return "hard";
    case LevelMode::kFixed: return "fixed";
  }
  return "soft";
}

LevelMode parse_level_mode(const std::string& name) {
  if (name == "soft") return LevelMode::kSoft;
  if (name == "hard") return LevelMode::kHard;
  if (name == "fixed") return LevelMode::kFixed;
  throw ConfigError("unknown level mode '" + name + "' (soft|hard|fixed)");
}

void TimeRouterConfig::validate() const {
  if (levels == 0) throw ConfigError("time router needs at least one level");
  if (time_width == 0 || time_width % 2 != 0) throw ConfigError("time width must be even");
  if (key_width == 0) throw ConfigError("key width must be positive");
  if (!(sigma > 0.0)) throw ConfigError("guide sigma must be positive");
  if (!(kl_weight >= 0.0)) throw ConfigError("KL weight must be >= 0");
}

std::vector<double> time_embedding(std::size_t t, std::size_t steps, std::size_t width) {
  check_step(t, steps);
  if (width == 0 || width % 2 != 0) throw ConfigError("time embedding width must be even");
  const std::size_t half = width / 2;
  std::vector<double> out(width);
  for (std::size_t k = 0; k < half; ++k) {
    const double expo = half > 1 ? static_cast<double>(k) / static_cast<double>(half - 1) : 0.0;
    const double omega = std::pow(1e-4, expo);
    out[2 * k] = std::sin(static_cast<double>(t) * omega);
    out[2 * k + 1] = std::cos(static_cast<double>(t) * omega);
  }
  return out;
}

std::vector<double> guide_distribution(std::size_t t, std::size_t steps, std::size_t levels,
                                       double sigma) {
  check_step(t, steps);
  if (levels == 0) throw ConfigError("guide needs at least one level");
  if (!(sigma > 0.0)) throw ConfigError("guide sigma must be positive");
  const double mu = static_cast<double>(levels) * static_cast<double>(t) /
                    static_cast<double>(steps);
  std::vector<double> out(levels);
  double total = 0.0;
  for (std::size_t l = 0; l < levels; ++l) {
    const double d = static_cast<double>(l + 1) - mu;
    out[l] = std::exp(-d * d / (2.0 * sigma * sigma));
    total += out[l];
  }
  for (double& p : out) p /= total;
  return out;
}

ad::Var time_logits(ad::Var codes, ad::Var w_q, ad::Var phi, ad::Var w_k) {
  const ad::Var q = ad::matmul(codes, w_q);
  const ad::Var k = ad::matmul(phi, w_k);
  return ad::scale(ad::matmul(q, ad::transpose(k)),
                   1.0 / std::sqrt(static_cast<double>(w_k.cols())));
}

ad::Var kl_penalty(ad::Var p, const ad::Tensor& q) {
  if (p.rows() != q.rows() || p.cols() != q.cols()) {
    throw ShapeError("kl_penalty: " + p.value().shape_string() + " vs " + q.shape_string());
  }
  ad::Tensor log_q = q;
  for (double& v : log_q.data()) {
    if (!(v > 0.0)) throw NumericError("kl_penalty: guide distribution has a zero entry");
    v = std::log(v);
  }
  ad::Tape& tape = *p.tape();
  const ad::Var diff = ad::sub(ad::log(p), tape.constant(std::move(log_q)));
  return ad::scale(ad::sum(ad::mul(p, diff)), 1.0 / static_cast<double>(q.rows()));
}

LevelSelection select_level(LevelMode mode, std::span<const double> p, std::size_t t,
                            std::size_t steps, std::size_t levels) {
  LevelSelection sel;
  sel.mode = mode;
  switch (mode) {
    case LevelMode::kSoft:
      if (p.size() != levels) throw ShapeError("select_level: weight count mismatch");
      sel.weights.assign(p.begin(), p.end());
      break;
    case LevelMode::kHard:
      if (p.size() != levels) throw ShapeError("select_level: weight count mismatch");
      sel.level = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
      break;
    case LevelMode::kFixed:
      check_step(t, steps);
      sel.level = std::min(levels * t / steps, levels - 1);
      break;
  }
  return sel;
}

TimeRouter::TimeRouter(TimeRouterConfig config, std::size_t steps, std::uint64_t seed)
    : config_(config), steps_(steps) {
  config_.validate();
  ad::RngStream rng(seed, kInitStream);
  const auto& c = config_;
  const double sk = 1.0 / std::sqrt(static_cast<double>(c.key_width));
  const double st = 1.0 / std::sqrt(static_cast<double>(c.time_width));
  auto draw = [&](std::size_t r, std::size_t cols, double sd) {
    ad::Tensor t(r, cols);
    for (double& x : t.data()) x = rng.normal(0.0, sd);
    return t;
  };
  params_.add("time.phi", draw(c.levels, c.key_width, 1.0));
  params_.add("time.w_q", draw(c.time_width, c.key_width, st));
  params_.add("time.w_k", draw(c.key_width, c.key_width, sk));
  bind_layout();
}

TimeRouter::TimeRouter(TimeRouterConfig config, std::size_t steps, ad::ParameterSet params)
    : config_(config), steps_(steps), params_(std::move(params)) {
  config_.validate();
  bind_layout();
}

void TimeRouter::bind_layout() {
  if (steps_ == 0) throw ConfigError("time router needs T >= 1");
  const auto& c = config_;
  auto expect = [&](const std::string& name, std::size_t r, std::size_t cols) {
    if (!params_.contains(name)) throw ConfigError("time router parameter missing: " + name);
    const ad::ParamId id = params_.id(name);
    if (params_.value(id).rows() != r || params_.value(id).cols() != cols) {
      throw ShapeError("time router parameter " + name + " is " +
                       params_.value(id).shape_string() + ", expected " +
                       ad::shape_string(r, cols));
    }
    return id;
  };
  phi_ = expect("time.phi", c.levels, c.key_width);
  query_ = expect("time.w_q", c.time_width, c.key_width);
  key_ = expect("time.w_k", c.key_width, c.key_width);
}

ad::Var TimeRouter::logits(ad::Tape& tape, std::span<const std::size_t> t,
                           const ad::Bindings& bind) const {
  if (t.empty()) throw ShapeError("time router: empty batch");
  const std::size_t w = config_.time_width;
  ad::Tensor codes(t.size(), w);
  for (std::size_t b = 0; b < t.size(); ++b) {
    const auto code = time_embedding(t[b], steps_, w);
    std::copy(code.begin(), code.end(), codes.row_span(b).begin());
  }
  return time_logits(tape.constant(std::move(codes)), bind(tape, params_, query_),
                     bind(tape, params_, phi_), bind(tape, params_, key_));
}

ad::Var TimeRouter::weights(ad::Tape& tape, std::span<const std::size_t> t,
                            const ad::Bindings& bind) const {
  return ad::softmax_rows(logits(tape, t, bind));
}

ad::Tensor TimeRouter::guide(std::span<const std::size_t> t) const {
  ad::Tensor out(t.size(), config_.levels);
  for (std::size_t b = 0; b < t.size(); ++b) {
    const auto g = guide_distribution(t[b], steps_, config_.levels, config_.sigma);
    std::copy(g.begin(), g.end(), out.row_span(b).begin());
  }
  return out;
}

std::vector<double> TimeRouter::weights(std::size_t t) const {
  ad::Tape tape;
  const std::size_t ts[] = {t};
  const ad::Var p = weights(tape, ts, {.mode = ad::Binding::kFrozen});
  return {p.value().data().begin(), p.value().data().end()};
}

}  // namespace mrb::router
