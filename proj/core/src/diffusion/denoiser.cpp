#include "mrb/diffusion/denoiser.hpp"

#include <cmath>
#include <string>

#include "mrb/ad/rng.hpp"
#include "mrb/error.hpp"
#include "mrb/router/time_router.hpp"

namespace mrb::diffusion {

namespace {

constexpr std::uint64_t kInitStream = 0x44'4E'53;  // "DNS"

}  // namespace

void DenoiserConfig::validate() const {
  if (tokens == 0 || width == 0 || cond == 0 || hidden == 0 || mlp == 0) {
    throw ConfigError("denoiser widths must be positive");
  }
  if (time_width == 0 || time_width % 2 != 0) throw ConfigError("denoiser time width must be even");
  if (steps == 0) throw ConfigError("denoiser needs T >= 1");
}

Denoiser::Denoiser(DenoiserConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  ad::RngStream rng(seed, kInitStream);
  const auto& c = config_;
  auto draw = [&](std::size_t r, std::size_t cols, double sd) {
    ad::Tensor t(r, cols);
    for (double& x : t.data()) x = rng.normal(0.0, sd);
    return t;
  };
  auto fan = [](std::size_t n) { return 1.0 / std::sqrt(static_cast<double>(n)); };
  params_.add("den.in_w", draw(c.width, c.hidden, fan(c.width)));
  params_.add("den.in_b", ad::Tensor(1, c.hidden));
  params_.add("den.pos", draw(c.tokens, c.hidden, 0.1));
  params_.add("den.time_w", draw(c.time_width, c.hidden, fan(c.time_width)));
  params_.add("den.time_b", ad::Tensor(1, c.hidden));
  for (std::size_t b = 0; b < c.blocks; ++b) {
    const std::string p = "den.block." + std::to_string(b) + ".";
    params_.add(p + "q", draw(c.hidden, c.hidden, fan(c.hidden)));
    params_.add(p + "k", draw(c.cond, c.hidden, fan(c.cond)));
    params_.add(p + "v", draw(c.cond, c.hidden, fan(c.cond)));
    params_.add(p + "o", draw(c.hidden, c.hidden, fan(c.hidden)));
    params_.add(p + "w1", draw(c.hidden, c.mlp, fan(c.hidden)));
    params_.add(p + "b1", ad::Tensor(1, c.mlp));
    params_.add(p + "w2", draw(c.mlp, c.hidden, fan(c.mlp)));
    params_.add(p + "b2", ad::Tensor(1, c.hidden));
  }
  params_.add("den.out_w", draw(c.hidden, c.width, fan(c.hidden)));
  params_.add("den.out_b", ad::Tensor(1, c.width));
  params_.add("den.null", draw(1, c.cond, 1.0));
  bind_layout();
}

Denoiser::Denoiser(DenoiserConfig config, ad::ParameterSet params)
    : config_(config), params_(std::move(params)) {
  config_.validate();
  bind_layout();
}

void Denoiser::bind_layout() {
  const auto& c = config_;
  auto expect = [&](const std::string& name, std::size_t r, std::size_t cols) {
    if (!params_.contains(name)) throw ConfigError("denoiser parameter missing: " + name);
    const ad::ParamId id = params_.id(name);
    if (params_.value(id).rows() != r || params_.value(id).cols() != cols) {
      throw ShapeError("denoiser parameter " + name + " is " + params_.value(id).shape_string() +
                       ", expected " + ad::shape_string(r, cols));
    }
    return id;
  };
  in_w_ = expect("den.in_w", c.width, c.hidden);
  in_b_ = expect("den.in_b", 1, c.hidden);
  pos_ = expect("den.pos", c.tokens, c.hidden);
  time_w_ = expect("den.time_w", c.time_width, c.hidden);
  time_b_ = expect("den.time_b", 1, c.hidden);
  blocks_.clear();
  for (std::size_t b = 0; b < c.blocks; ++b) {
    const std::string p = "den.block." + std::to_string(b) + ".";
    blocks_.push_back({expect(p + "q", c.hidden, c.hidden), expect(p + "k", c.cond, c.hidden),
                       expect(p + "v", c.cond, c.hidden), expect(p + "o", c.hidden, c.hidden),
                       expect(p + "w1", c.hidden, c.mlp), expect(p + "b1", 1, c.mlp),
                       expect(p + "w2", c.mlp, c.hidden), expect(p + "b2", 1, c.hidden)});
  }
  out_w_ = expect("den.out_w", c.hidden, c.width);
  out_b_ = expect("den.out_b", 1, c.width);
  null_ = expect("den.null", 1, c.cond);
}

ad::Var Denoiser::forward(ad::Tape& tape, ad::Var z, std::span<const std::size_t> t, ad::Var c,
                          const ad::Bindings& bind) const {
  const auto& cfg = config_;
  const std::size_t batch = t.size();
  const std::size_t rows = batch * cfg.tokens;
  if (batch == 0) throw ShapeError("denoiser: empty batch");
  if (z.rows() != rows || z.cols() != cfg.width) {
    throw ShapeError("denoiser: latent is " + z.value().shape_string() + ", expected " +
                     ad::shape_string(rows, cfg.width));
  }
  if (c.rows() != rows || c.cols() != cfg.cond) {
    throw ShapeError("denoiser: condition is " + c.value().shape_string() + ", expected " +
                     ad::shape_string(rows, cfg.cond));
  }
  auto p = [&](ad::ParamId id) { return bind(tape, params_, id); };

  ad::Tensor codes(rows, cfg.time_width);
  std::vector<std::size_t> token_index(rows);
  for (std::size_t b = 0; b < batch; ++b) {
    const auto code = router::time_embedding(t[b], cfg.steps, cfg.time_width);
    for (std::size_t k = 0; k < cfg.tokens; ++k) {
      std::copy(code.begin(), code.end(), codes.row_span(b * cfg.tokens + k).begin());
      token_index[b * cfg.tokens + k] = k;
    }
  }
  ad::Var h = ad::affine(z, p(in_w_), p(in_b_));
  h = ad::add(h, ad::gather_rows(p(pos_), token_index));
  h = ad::add(h, ad::affine(tape.constant(std::move(codes)), p(time_w_), p(time_b_)));

  const std::vector<std::size_t> blocks(batch, cfg.tokens);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(cfg.hidden));
  for (const Block& blk : blocks_) {
    const ad::Var q = ad::matmul(h, p(blk.q));
    const ad::Var k = ad::matmul(c, p(blk.k));
    const ad::Var v = ad::matmul(c, p(blk.v));
    const auto att = ad::block_attention(q, k, v, blocks, blocks, inv_sqrt);
    h = ad::add(h, ad::matmul(att.output, p(blk.o)));
    const ad::Var u = ad::gelu(ad::affine(h, p(blk.w1), p(blk.b1)));
    h = ad::add(h, ad::affine(u, p(blk.w2), p(blk.b2)));
  }
  return ad::affine(h, p(out_w_), p(out_b_));
}

ad::Var Denoiser::null_condition(ad::Tape& tape, std::size_t batch,
                                 const ad::Bindings& bind) const {
  const std::vector<std::size_t> zeros(batch * config_.tokens, 0);
  return ad::gather_rows(bind(tape, params_, null_), zeros);
}

ad::Var Denoiser::drop_condition(ad::Tape& tape, ad::Var c, const std::vector<bool>& drop,
                                 const ad::Bindings& bind) const {
  const std::size_t n = config_.tokens;
  if (c.rows() != drop.size() * n) throw ShapeError("drop_condition: batch size mismatch");
  const std::size_t null_row = c.rows();
  std::vector<std::size_t> index(c.rows());
  for (std::size_t r = 0; r < c.rows(); ++r) index[r] = drop[r / n] ? null_row : r;
  const ad::Var parts[] = {c, bind(tape, params_, null_)};
  return ad::gather_rows(ad::concat_rows(parts), index);
}

}  // namespace mrb::diffusion
