#include "mrb/moe/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mrb/ad/rng.hpp"
#include "mrb/error.hpp"

namespace mrb::moe {

namespace {

constexpr double kMasked = -1e30;
constexpr std::uint64_t kInitStream = 0x45'4E'43;  // "ENC"

ad::Tensor normal_tensor(ad::RngStream& rng, std::size_t r, std::size_t c, double sd) {
  ad::Tensor t(r, c);
  for (double& x : t.data()) x = rng.normal(0.0, sd);
  return t;
}

std::string expert_prefix(std::size_t level, std::size_t expert) {
  return "expert." + std::to_string(level) + "." + std::to_string(expert) + ".";
}

ad::Var activate(ad::Var x, Activation a) {
  return a == Activation::kTanh ? ad::tanh(x) : ad::gelu(x);
}

void check_order(const ExpertVoxels& order, std::size_t experts, std::size_t voxels) {
  if (order.size() != experts) throw ShapeError("fixed routing: expert count mismatch");
  for (const auto& set : order) {
    if (set.empty()) throw ShapeError("fixed routing: empty expert");
    for (std::size_t i : set)
      if (i >= voxels) throw ShapeError("fixed routing: voxel index out of range");
  }
}

}  // namespace

MoeEncoder::MoeEncoder(HierarchyConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  ad::RngStream rng(seed, kInitStream);
  const auto& c = config_;
  params_.add("U", normal_tensor(rng, c.voxels, c.voxel_embed, 1e-3));
  for (std::size_t l = 0; l < c.levels; ++l) {
    const std::size_t d = c.input_width(l);
    ad::Tensor w = normal_tensor(rng, d, c.experts_at(l), 1.0 / std::sqrt(static_cast<double>(d)));
    params_.add("router." + std::to_string(l), std::move(w));
  }
  const double sf = 1.0 / std::sqrt(static_cast<double>(c.feature));
  for (std::size_t l = 0; l < c.levels; ++l) {
    const std::size_t d = c.input_width(l);
    for (std::size_t j = 0; j < c.experts_at(l); ++j) {
      const std::string p = expert_prefix(l, j);
      params_.add(p + "w1", normal_tensor(rng, d, c.feature, 1.0 / std::sqrt(static_cast<double>(d))));
      params_.add(p + "b1", ad::Tensor(1, c.feature));
      params_.add(p + "w2", normal_tensor(rng, c.feature, c.feature, sf));
      params_.add(p + "b2", ad::Tensor(1, c.feature));
      params_.add(p + "img_w", normal_tensor(rng, c.feature, c.embed, sf));
      params_.add(p + "img_b", ad::Tensor(1, c.embed));
      params_.add(p + "text_w", normal_tensor(rng, c.feature, c.embed, sf));
      params_.add(p + "text_b", ad::Tensor(1, c.embed));
    }
  }
  bind_layout();
}

MoeEncoder::MoeEncoder(HierarchyConfig config, ad::ParameterSet params)
    : config_(config), params_(std::move(params)) {
  config_.validate();
  bind_layout();
}

void MoeEncoder::bind_layout() {
  const auto& c = config_;
  auto expect = [&](const std::string& name, std::size_t r, std::size_t cols) {
    if (!params_.contains(name)) throw ConfigError("encoder parameter missing: " + name);
    const ad::ParamId id = params_.id(name);
    const ad::Tensor& t = params_.value(id);
    if (t.rows() != r || t.cols() != cols) {
      throw ShapeError("encoder parameter " + name + " is " + t.shape_string() + ", expected " +
                       ad::shape_string(r, cols));
    }
    return id;
  };
  voxel_embedding_ = expect("U", c.voxels, c.voxel_embed);
  routers_.clear();
  experts_.assign(c.levels, {});
  for (std::size_t l = 0; l < c.levels; ++l) {
    const std::size_t d = c.input_width(l);
    routers_.push_back(expect("router." + std::to_string(l), d, c.experts_at(l)));
    for (std::size_t j = 0; j < c.experts_at(l); ++j) {
      const std::string p = expert_prefix(l, j);
      experts_[l].push_back({expect(p + "w1", d, c.feature), expect(p + "b1", 1, c.feature),
                             expect(p + "w2", c.feature, c.feature),
                             expect(p + "b2", 1, c.feature),
                             expect(p + "img_w", c.feature, c.embed),
                             expect(p + "img_b", 1, c.embed),
                             expect(p + "text_w", c.feature, c.embed),
                             expect(p + "text_b", 1, c.embed)});
    }
  }
}

std::vector<ad::ParamId> MoeEncoder::router_param_ids() const {
  std::vector<ad::ParamId> ids{voxel_embedding_};
  ids.insert(ids.end(), routers_.begin(), routers_.end());
  return ids;
}

std::vector<ad::ParamId> MoeEncoder::expert_param_ids() const {
  const auto routers = router_param_ids();
  std::vector<ad::ParamId> ids;
  for (ad::ParamId id = 0; id < params_.size(); ++id)
    if (std::find(routers.begin(), routers.end(), id) == routers.end()) ids.push_back(id);
  return ids;
}

ad::Var MoeEncoder::bind(ad::Tape& tape, ad::ParamId id, const EncodeOptions& options) const {
  return ad::Bindings{options.binding, options.bound_params}(tape, params_, id);
}

EncoderForward MoeEncoder::forward(ad::Tape& tape, ad::Var voxels, std::size_t batch,
                                   const EncodeOptions& options) const {
  const auto& c = config_;
  const std::size_t v = c.voxels;
  if (batch == 0) throw ShapeError("encoder: empty batch");
  if (voxels.rows() != batch * v || voxels.cols() != 1) {
    throw ShapeError("encoder: expected " + ad::shape_string(batch * v, 1) + " voxel column, got " +
                     voxels.value().shape_string());
  }
  if (options.bound_params && options.bound_params->size() != params_.size()) {
    throw ShapeError("bound parameters: one Var per encoder parameter required");
  }
  if (options.fixed_routing && options.fixed_routing->size() != batch) {
    throw ShapeError("fixed routing: one assignment per sample required");
  }
  const EncodeOptions& bnd = options;

  EncoderForward out;
  out.batch = batch;
  out.routing.assign(batch, {});
  for (auto& r : out.routing) {
    r.sets.resize(c.levels);
    r.order.resize(c.levels);
  }

  std::vector<std::size_t> tile(batch * v);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < v; ++i) tile[b * v + i] = i;
  const ad::Var u = bind(tape, voxel_embedding_, bnd);
  const ad::Var x0_parts[] = {voxels, ad::gather_rows(u, tile)};
  ad::Var x = ad::concat_cols(x0_parts);

  // owner[b*v+i]: expert holding voxel i of sample b at the previous level
  std::vector<std::size_t> owner(batch * v, 0);
  std::vector<std::size_t> ids(v);
  for (std::size_t i = 0; i < v; ++i) ids[i] = i;

  const double level_w = 1.0 / static_cast<double>(c.levels);
  ad::Var pred_img, pred_text;
  out.img.resize(c.levels);
  out.text.resize(c.levels);

  for (std::size_t l = 0; l < c.levels; ++l) {
    const std::size_t e = c.experts_at(l);
    ad::Var logits = ad::matmul(x, bind(tape, routers_[l], bnd));
    if (l > 0) {
      ad::Tensor mask(batch * v, e, kMasked);
      for (std::size_t r = 0; r < batch * v; ++r) {
        const std::size_t first = owner[r] * c.branching;
        for (std::size_t k = 0; k < c.branching; ++k) mask(r, first + k) = 0.0;
      }
      logits = ad::add(logits, tape.constant(std::move(mask)));
    }
    const ad::Var p = ad::softmax_rows(logits);
    out.probabilities.push_back(p);
    const ad::Tensor& pv = p.value();

    for (std::size_t b = 0; b < batch; ++b) {
      HierarchyAssignment& ha = out.routing[b];
      ExpertVoxels order;
      if (options.fixed_routing) {
        order = (*options.fixed_routing)[b].order.at(l);
        check_order(order, e, v);
      } else if (l == 0) {
        std::vector<std::size_t> rows(v);
        for (std::size_t i = 0; i < v; ++i) rows[i] = b * v + i;
        order = assign_topk_block(pv, rows, 0, e, 1.0, ids);
      } else {
        order.resize(e);
        const auto& parents = ha.sets[l - 1];
        for (std::size_t par = 0; par < parents.size(); ++par) {
          std::vector<std::size_t> rows;
          rows.reserve(parents[par].size());
          for (std::size_t i : parents[par]) rows.push_back(b * v + i);
          auto sub = assign_topk_block(pv, rows, par * c.branching, c.branching, 1.0,
                                       parents[par]);
          for (std::size_t k = 0; k < c.branching; ++k)
            order[par * c.branching + k] = std::move(sub[k]);
        }
      }
      ha.sets[l].resize(e);
      for (std::size_t j = 0; j < e; ++j) {
        ha.sets[l][j] = order[j];
        std::sort(ha.sets[l][j].begin(), ha.sets[l][j].end());
      }
      ha.order[l] = std::move(order);
      ad::Tensor pb(v, e);
      std::copy_n(pv.data().begin() + static_cast<std::ptrdiff_t>(b * v * e), v * e,
                  pb.data().begin());
      ha.probabilities.push_back(std::move(pb));
    }

    std::vector<ad::Var> outputs;
    outputs.reserve(e);
    std::vector<std::size_t> next_rows(batch * v, 0);
    std::size_t offset = 0;
    const double expert_w = level_w / static_cast<double>(e);
    for (std::size_t j = 0; j < e; ++j) {
      std::vector<std::size_t> idx;
      std::vector<std::size_t> lengths(batch);
      idx.reserve(batch * v / e + batch);
      for (std::size_t b = 0; b < batch; ++b) {
        const auto& set = out.routing[b].order[l][j];
        lengths[b] = set.size();
        for (std::size_t i : set) {
          next_rows[b * v + i] = offset + idx.size();
          owner[b * v + i] = j;
          idx.push_back(b * v + i);
        }
      }
      offset += idx.size();
      const ExpertParamIds& ep = experts_[l][j];
      const ad::Var h = activate(
          ad::affine(ad::gather_rows(x, idx), bind(tape, ep.w1, bnd), bind(tape, ep.b1, bnd)),
          c.activation);
      const ad::Var o = ad::affine(h, bind(tape, ep.w2, bnd), bind(tape, ep.b2, bnd));
      const ad::Var pooled = ad::segment_mean_rows(o, lengths);
      const ad::Var ci = ad::l2_normalize_rows(
          ad::affine(pooled, bind(tape, ep.img_w, bnd), bind(tape, ep.img_b, bnd)));
      const ad::Var ct = ad::l2_normalize_rows(
          ad::affine(pooled, bind(tape, ep.text_w, bnd), bind(tape, ep.text_b, bnd)));
      out.img[l].push_back(ci);
      out.text[l].push_back(ct);
      const ad::Var wi = ad::scale(ci, expert_w);
      const ad::Var wt = ad::scale(ct, expert_w);
      pred_img = pred_img.valid() ? ad::add(pred_img, wi) : wi;
      pred_text = pred_text.valid() ? ad::add(pred_text, wt) : wt;
      outputs.push_back(o);
    }
    if (offset != batch * v) throw ShapeError("encoder: routing does not cover every voxel");
    if (l + 1 < c.levels) x = ad::gather_rows(ad::concat_rows(outputs), next_rows);
  }
  out.pred_img = pred_img;
  out.pred_text = pred_text;
  return out;
}

std::pair<ExpertEmbeddingSet, HierarchyAssignment> MoeEncoder::encode(
    std::span<const double> voxels) const {
  if (voxels.size() != config_.voxels) {
    throw ShapeError("encode: expected " + std::to_string(config_.voxels) + " voxels, got " +
                     std::to_string(voxels.size()));
  }
  ad::Tape tape;
  const auto fwd = forward(tape, tape.constant(ad::Tensor::column(voxels)), 1,
                           {.binding = Binding::kFrozen});
  ExpertEmbeddingSet set(config_.levels);
  for (std::size_t l = 0; l < config_.levels; ++l) {
    for (std::size_t j = 0; j < fwd.img[l].size(); ++j) {
      const auto& ci = fwd.img[l][j].value().data();
      const auto& ct = fwd.text[l][j].value().data();
      set[l].push_back({{ci.begin(), ci.end()}, {ct.begin(), ct.end()}});
    }
  }
  return {std::move(set), fwd.routing.front()};
}

ad::Tensor voxel_features(std::span<const double> voxels, const ad::Tensor& voxel_embedding) {
  if (voxel_embedding.rows() != voxels.size()) {
    throw ShapeError("voxel_features: " + std::to_string(voxels.size()) + " voxels but U is " +
                     voxel_embedding.shape_string());
  }
  const std::size_t d = voxel_embedding.cols();
  ad::Tensor x(voxels.size(), 1 + d);
  for (std::size_t i = 0; i < voxels.size(); ++i) {
    x(i, 0) = voxels[i];
    for (std::size_t k = 0; k < d; ++k) x(i, 1 + k) = voxel_embedding(i, k);
  }
  return x;
}

std::pair<ad::Tensor, ad::Tensor> router_affinity(const ad::Tensor& features,
                                                  const ad::Tensor& router_weight) {
  if (features.cols() != router_weight.rows()) {
    throw ShapeError("router_affinity: " + features.shape_string() + " x " +
                     router_weight.shape_string());
  }
  ad::Tensor a = ad::kernels::matmul(features, router_weight);
  ad::Tensor p = ad::kernels::softmax_rows(a);
  return {std::move(a), std::move(p)};
}

ExpertOutput expert_forward(const ad::Tensor& inputs, const ad::ParameterSet& params,
                            const ExpertParamIds& ids, Activation activation) {
  if (inputs.rows() == 0) throw ShapeError("expert_forward: no voxels");
  ad::Tape tape;
  auto pv = [&](ad::ParamId id) { return tape.constant(params.value(id)); };
  const ad::Var x = tape.constant(inputs);
  const ad::Var h = activate(ad::affine(x, pv(ids.w1), pv(ids.b1)), activation);
  const ad::Var o = ad::affine(h, pv(ids.w2), pv(ids.b2));
  const std::size_t len[] = {inputs.rows()};
  const ad::Var pooled = ad::segment_mean_rows(o, len);
  const auto ci = ad::l2_normalize_rows(ad::affine(pooled, pv(ids.img_w), pv(ids.img_b)));
  const auto ct = ad::l2_normalize_rows(ad::affine(pooled, pv(ids.text_w), pv(ids.text_b)));
  return {o.value(),
          {ci.value().data().begin(), ci.value().data().end()},
          {ct.value().data().begin(), ct.value().data().end()}};
}

}  // namespace mrb::moe
