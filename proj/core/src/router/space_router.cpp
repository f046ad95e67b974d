#include "mrb/router/space_router.hpp"

#include <cmath>
#include <string>

#include "mrb/ad/rng.hpp"
#include "mrb/error.hpp"

namespace mrb::router {

namespace {

constexpr std::uint64_t kInitStream = 0x53'52'54;  // "SRT"

}  // namespace

void SpaceRouterConfig::validate() const {
  if (latent_width == 0 || embed == 0 || attn == 0 || cond == 0) {
    throw ConfigError("space router widths must be positive");
  }
}

SpaceRouter::SpaceRouter(SpaceRouterConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  ad::RngStream rng(seed, kInitStream);
  auto draw = [&](std::size_t r, std::size_t c) {
    ad::Tensor t(r, c);
    const double sd = 1.0 / std::sqrt(static_cast<double>(r));
    for (double& x : t.data()) x = rng.normal(0.0, sd);
    return t;
  };
  params_.add("space.w_q", draw(config_.latent_width, config_.attn));
  params_.add("space.w_k", draw(config_.embed, config_.attn));
  params_.add("space.w_v", draw(config_.embed, config_.cond));
  bind_layout();
}

SpaceRouter::SpaceRouter(SpaceRouterConfig config, ad::ParameterSet params)
    : config_(config), params_(std::move(params)) {
  config_.validate();
  bind_layout();
}

void SpaceRouter::bind_layout() {
  auto expect = [&](const std::string& name, std::size_t r, std::size_t c) {
    if (!params_.contains(name)) throw ConfigError("space router parameter missing: " + name);
    const ad::ParamId id = params_.id(name);
    if (params_.value(id).rows() != r || params_.value(id).cols() != c) {
      throw ShapeError("space router parameter " + name + " is " +
                       params_.value(id).shape_string() + ", expected " + ad::shape_string(r, c));
    }
    return id;
  };
  query_ = expect("space.w_q", config_.latent_width, config_.attn);
  key_ = expect("space.w_k", config_.embed, config_.attn);
  value_ = expect("space.w_v", config_.embed, config_.cond);
}

SpaceAttention SpaceRouter::condition(ad::Tape& tape, ad::Var z, ad::Var e,
                                      const ad::Bindings& bind) const {
  const std::size_t counts[] = {e.rows()};
  return condition(tape, z, z.rows(), e, counts, bind);
}

SpaceAttention SpaceRouter::condition(ad::Tape& tape, ad::Var z, std::size_t tokens, ad::Var e,
                                      std::span<const std::size_t> counts,
                                      const ad::Bindings& bind) const {
  const std::size_t batch = counts.size();
  if (batch == 0 || tokens == 0) throw ShapeError("space router: empty batch");
  if (z.rows() != batch * tokens || z.cols() != config_.latent_width) {
    throw ShapeError("space router: latent is " + z.value().shape_string() + ", expected " +
                     ad::shape_string(batch * tokens, config_.latent_width));
  }
  std::size_t total = 0;
  for (std::size_t m : counts) {
    if (m == 0) throw ShapeError("space router: a sample selected no expert embeddings");
    total += m;
  }
  if (e.rows() != total || e.cols() != config_.embed) {
    throw ShapeError("space router: embeddings are " + e.value().shape_string() +
                     ", expected " + ad::shape_string(total, config_.embed));
  }

  const ad::Var q = ad::matmul(z, bind(tape, params_, query_));
  const ad::Var k = ad::matmul(e, bind(tape, params_, key_));
  const ad::Var v = ad::matmul(e, bind(tape, params_, value_));
  const std::vector<std::size_t> q_rows(batch, tokens);
  auto att = ad::block_attention(q, k, v, q_rows, counts,
                                 1.0 / std::sqrt(static_cast<double>(config_.attn)));
  return {att.output, std::move(att.weights)};
}

ExpertTable expert_table(const moe::ExpertEmbeddingSet& set) {
  if (set.empty()) throw ShapeError("expert_table: no levels");
  const std::size_t d = set.front().at(0).img.size();
  std::size_t rows = 0;
  for (const auto& level : set) rows += 2 * level.size();
  ExpertTable table{ad::Tensor(rows, d), {}, set.size()};
  std::size_t r = 0;
  for (std::size_t l = 0; l < set.size(); ++l) {
    for (int modality = 0; modality < 2; ++modality) {
      for (const auto& e : set[l]) {
        const auto& src = modality == 0 ? e.img : e.text;
        if (src.size() != d) throw ShapeError("expert_table: width mismatch");
        std::copy(src.begin(), src.end(), table.rows.row_span(r).begin());
        table.level_of_row.push_back(l);
        ++r;
      }
    }
  }
  return table;
}

std::vector<ExpertTable> expert_tables(const moe::EncoderForward& fwd) {
  std::vector<ExpertTable> out;
  for (std::size_t b = 0; b < fwd.batch; ++b) {
    moe::ExpertEmbeddingSet set(fwd.img.size());
    for (std::size_t l = 0; l < fwd.img.size(); ++l) {
      for (std::size_t j = 0; j < fwd.img[l].size(); ++j) {
        const auto img = fwd.img[l][j].value().row_span(b);
        const auto text = fwd.text[l][j].value().row_span(b);
        set[l].push_back({{img.begin(), img.end()}, {text.begin(), text.end()}});
      }
    }
    out.push_back(expert_table(set));
  }
  return out;
}

SelectedEmbeddings select_embeddings(ad::Tape& tape, std::span<const ExpertTable* const> tables,
                                     ad::Var p_t, LevelMode mode,
                                     std::span<const std::size_t> t, std::size_t steps) {
  const std::size_t batch = tables.size();
  if (batch == 0) throw ShapeError("select_embeddings: empty batch");
  if (p_t.rows() != batch || t.size() != batch) {
    throw ShapeError("select_embeddings: batch size mismatch");
  }
  const std::size_t levels = p_t.cols();
  SelectedEmbeddings out;
  out.counts.resize(batch);
  out.selections.reserve(batch);
  const ad::Tensor& pv = p_t.value();

  if (mode == LevelMode::kSoft) {
    std::vector<ad::Var> parts;
    std::size_t total = 0;
    for (std::size_t b = 0; b < batch; ++b) {
      if (tables[b]->levels != levels) throw ShapeError("select_embeddings: level count mismatch");
      out.counts[b] = tables[b]->rows.rows();
      total += out.counts[b];
      out.selections.push_back(select_level(mode, pv.row_span(b), t[b], steps, levels));
      parts.push_back(tape.constant(tables[b]->rows));
    }
    // weight of row r = P_T[sample(r), level(r)]
    std::vector<std::size_t> sample_of;
    ad::Tensor level_hot(total, levels);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t l : tables[b]->level_of_row) {
        level_hot(sample_of.size(), l) = 1.0;
        sample_of.push_back(b);
      }
    }
    const ad::Var per_row =
        ad::mul(ad::gather_rows(p_t, sample_of), tape.constant(std::move(level_hot)));
    const ad::Var w = ad::matmul(per_row, tape.constant(ad::Tensor(levels, 1, 1.0)));
    out.rows = ad::mul(ad::concat_rows(parts), w);
    return out;
  }

  std::vector<ad::Var> parts;
  for (std::size_t b = 0; b < batch; ++b) {
    const ExpertTable& table = *tables[b];
    if (table.levels != levels) throw ShapeError("select_embeddings: level count mismatch");
    LevelSelection sel = select_level(mode, pv.row_span(b), t[b], steps, levels);
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < table.level_of_row.size(); ++i)
      if (table.level_of_row[i] == sel.level) keep.push_back(i);
    ad::Tensor rows(keep.size(), table.rows.cols());
    for (std::size_t i = 0; i < keep.size(); ++i) {
      const auto src = table.rows.row_span(keep[i]);
      std::copy(src.begin(), src.end(), rows.row_span(i).begin());
    }
    out.counts[b] = keep.size();
    parts.push_back(tape.constant(std::move(rows)));
    out.selections.push_back(std::move(sel));
  }
  out.rows = ad::concat_rows(parts);
  return out;
}

}  // namespace mrb::router
