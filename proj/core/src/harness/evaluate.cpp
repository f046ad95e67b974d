#include "mrb/harness/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <Eigen/Dense>

#include "mrb/error.hpp"

namespace mrb::harness {

namespace {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Matrix to_matrix(const ad::Tensor& t) {
  return Eigen::Map<const Matrix>(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                                  static_cast<Eigen::Index>(t.cols()));
}

std::vector<double> normalized(std::span<const double> v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  std::vector<double> out(v.begin(), v.end());
  if (n > 0.0)
    for (double& x : out) x /= n;
  return out;
}

}  // namespace

DecodeScores score(const Predictions& pred, const synth::Dataset& data) {
  if (pred.img.rows() != data.size()) throw ShapeError("score: prediction count mismatch");
  DecodeScores s;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& smp = data.samples[i];
    s.cosine_img += cosine(pred.img.row_span(i), smp.y_img);
    s.cosine_text += cosine(pred.text.row_span(i), smp.y_text);
    s.mse_img += mse(pred.img.row_span(i), smp.y_img);
    s.mse_text += mse(pred.text.row_span(i), smp.y_text);
  }
  const double n = static_cast<double>(data.size());
  s.cosine_img /= n;
  s.cosine_text /= n;
  s.mse_img /= n;
  s.mse_text /= n;
  return s;
}

DecodeScores evaluate(const moe::MoeEncoder& encoder, const synth::Dataset& data) {
  return score(predict(encoder, data), data);
}

DecodeScores ridge_oracle(const synth::Dataset& train, const synth::Dataset& test, double lambda) {
  const auto design = [](const synth::Dataset& d) {
    Matrix x(static_cast<Eigen::Index>(d.size()), static_cast<Eigen::Index>(d.voxels + 1));
    for (std::size_t i = 0; i < d.size(); ++i) {
      for (std::size_t j = 0; j < d.voxels; ++j) x(i, j) = d.samples[i].x[j];
      x(i, d.voxels) = 1.0;
    }
    return x;
  };
  const auto all = iota(train.size());
  const Matrix x = design(train);
  Matrix gram = x.transpose() * x;
  gram.diagonal().array() += lambda * static_cast<double>(train.size());
  const auto solver = gram.ldlt();
  const Matrix w_img = solver.solve(x.transpose() * to_matrix(image_targets(train, all)));
  const Matrix w_text = solver.solve(x.transpose() * to_matrix(text_targets(train, all)));
  const Matrix xt = design(test);
  const Matrix p_img = xt * w_img;
  const Matrix p_text = xt * w_text;
  Predictions pred{ad::Tensor(test.size(), test.target), ad::Tensor(test.size(), test.target)};
  std::copy(p_img.data(), p_img.data() + p_img.size(), pred.img.data().begin());
  std::copy(p_text.data(), p_text.data() + p_text.size(), pred.text.data().begin());
  return score(pred, test);
}

std::vector<BottleneckPoint> bottleneck_curve(const Predictions& train_pred,
                                              const Predictions& test_pred,
                                              const synth::Dataset& test,
                                              std::span<const std::size_t> ranks) {
  const std::size_t dim = train_pred.img.cols();
  for (std::size_t r : ranks) {
    if (r > dim) {
      throw ConfigError("bottleneck rank " + std::to_string(r) + " exceeds embedding width " +
                        std::to_string(dim));
    }
  }
  const Matrix p = to_matrix(train_pred.img);
  const Matrix second = p.transpose() * p / static_cast<double>(p.rows());
  const Eigen::SelfAdjointEigenSolver<Matrix> eig(second);
  // Eigenvalues ascend; reverse to get the leading directions first.
  const Matrix basis = eig.eigenvectors().rowwise().reverse();
  const Matrix q = to_matrix(test_pred.img);

  std::vector<BottleneckPoint> out;
  for (std::size_t r : ranks) {
    BottleneckPoint pt{r, 0.0};
    if (r == 0) {
      out.push_back(pt);
      continue;
    }
    const Matrix v = basis.leftCols(static_cast<Eigen::Index>(r));
    const Matrix projected = (q * v) * v.transpose();
    for (std::size_t i = 0; i < test.size(); ++i) {
      std::span<const double> row(projected.data() + i * dim, dim);
      pt.cosine_img += cosine(row, test.samples[i].y_img);
    }
    pt.cosine_img /= static_cast<double>(test.size());
    out.push_back(pt);
  }
  return out;
}

std::vector<double> expected_gradients(const Readout& readout, std::span<const double> x,
                                       std::span<const std::vector<double>> baselines,
                                       std::size_t n_interp, ad::RngStream& rng) {
  if (baselines.empty() || n_interp == 0) throw ConfigError("expected gradients need baselines and n_interp >= 1");
  const std::size_t v = x.size();
  std::vector<double> attr(v, 0.0), point(v), grad(v);
  for (const auto& b : baselines) {
    if (b.size() != v) throw ShapeError("baseline width mismatch");
    for (std::size_t k = 0; k < n_interp; ++k) {
      const double alpha = (static_cast<double>(k) + rng.uniform()) / static_cast<double>(n_interp);
      for (std::size_t i = 0; i < v; ++i) point[i] = b[i] + alpha * (x[i] - b[i]);
      readout(point, grad);
      for (std::size_t i = 0; i < v; ++i) attr[i] += (x[i] - b[i]) * grad[i];
    }
  }
  const double n = static_cast<double>(baselines.size() * n_interp);
  for (double& a : attr) a /= n;
  return attr;
}

Readout encoder_readout(const moe::MoeEncoder& encoder, std::span<const double> y_img) {
  const auto y = normalized(y_img);
  return [&encoder, y](std::span<const double> x, std::span<double> grad) {
    ad::Tape tape;
    const ad::Var input = tape.variable(ad::Tensor::column(x));
    const auto fwd = encoder.forward(tape, input, 1, {.binding = ad::Binding::kFrozen});
    const ad::Var target = tape.constant(ad::Tensor::row(y));
    const ad::Var readout = ad::sum(ad::mul(ad::l2_normalize_rows(fwd.pred_img), target));
    const auto g = tape.backward(readout).wrt(input);
    std::copy(g.data().begin(), g.data().end(), grad.begin());
    return readout.value().item();
  };
}

Readout frozen_routing_readout(const moe::MoeEncoder& encoder, std::span<const double> y_img,
                               std::span<const double> anchor) {
  const auto y = normalized(y_img);
  std::vector<moe::HierarchyAssignment> routing;
  {
    ad::Tape tape;
    routing = encoder.forward(tape, tape.constant(ad::Tensor::column(anchor)), 1,
                              {.binding = ad::Binding::kFrozen})
                  .routing;
  }
  return [&encoder, y, routing](std::span<const double> x, std::span<double> grad) {
    ad::Tape tape;
    const ad::Var input = tape.variable(ad::Tensor::column(x));
    const auto fwd = encoder.forward(tape, input, 1,
                                     {.binding = ad::Binding::kFrozen, .fixed_routing = &routing});
    const ad::Var target = tape.constant(ad::Tensor::row(y));
    const ad::Var readout = ad::sum(ad::mul(ad::l2_normalize_rows(fwd.pred_img), target));
    const auto g = tape.backward(readout).wrt(input);
    std::copy(g.data().begin(), g.data().end(), grad.begin());
    return readout.value().item();
  };
}

std::vector<std::vector<double>> draw_baselines(const synth::Dataset& data, std::size_t n,
                                                ad::RngStream& rng) {
  if (n == 0 || n > data.size()) throw ConfigError("need 1..dataset-size baselines");
  const auto perm = rng.permutation(data.size());
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(data.samples[perm[i]].x);
  return out;
}

RoutingStats routing_stats(const diffusion::Generator& gen,
                           std::span<const router::ExpertTable> tables,
                           const diffusion::GenConfig& sampling, diffusion::SampleTrace* trace) {
  const auto& gcfg = gen.config();
  const std::size_t levels = gcfg.time.levels;
  const std::size_t tokens = gcfg.denoiser.tokens;
  if (tables.empty()) throw ConfigError("routing_stats: no items");
  std::vector<std::size_t> experts(levels, 0);
  for (std::size_t l : tables[0].level_of_row) ++experts.at(l);
  for (auto& e : experts) e /= 2;  // image and text row per expert

  std::vector<std::vector<double>> share(levels);
  for (std::size_t l = 0; l < levels; ++l) share[l].assign(experts[l], 0.0);
  std::vector<double> occurrences(levels, 0.0);

  std::vector<const router::ExpertTable*> ptrs;
  std::vector<std::uint64_t> ids;
  for (std::size_t i = 0; i < tables.size(); ++i) {
    ptrs.push_back(&tables[i]);
    ids.push_back(i);
  }
  diffusion::GenConfig cond = sampling;
  if (cond.guidance == 0.0) cond.guidance = 1.0;
  diffusion::SampleTrace local;
  diffusion::SampleTrace& tr = trace ? *trace : local;
  tr.steps.clear();
  diffusion::sample(gen, ptrs, ids, cond, &tr);

  for (std::size_t b = 0; b < tables.size(); ++b) {
    // (level, expert) of each table row.
    std::vector<std::pair<std::size_t, std::size_t>> row_owner;
    std::vector<std::size_t> seen_in_level(levels, 0);
    for (std::size_t l : tables[b].level_of_row) {
      row_owner.emplace_back(l, seen_in_level[l] % experts[l]);
      ++seen_in_level[l];
    }
    for (const auto& step : tr.steps) {
      std::vector<std::pair<std::size_t, std::size_t>> owners;
      if (gcfg.time.mode == router::LevelMode::kSoft) {
        owners = row_owner;
      } else {
        for (const auto& o : row_owner)
          if (o.first == step.levels.at(b)) owners.push_back(o);
      }
      for (std::size_t tok = 0; tok < tokens; ++tok) {
        std::vector<double> mass(levels, 0.0);
        std::vector<std::vector<double>> by_expert(levels);
        for (std::size_t l = 0; l < levels; ++l) by_expert[l].assign(experts[l], 0.0);
        for (std::size_t j = 0; j < owners.size(); ++j) {
          const double a = step.attention(b * tokens + tok, j);
          mass[owners[j].first] += a;
          by_expert[owners[j].first][owners[j].second] += a;
        }
        for (std::size_t l = 0; l < levels; ++l) {
          if (!(mass[l] > 0.0)) continue;
          for (std::size_t e = 0; e < experts[l]; ++e) share[l][e] += by_expert[l][e] / mass[l];
          occurrences[l] += 1.0;
        }
      }
    }
  }

  RoutingStats out;
  out.utilization = share;
  for (std::size_t l = 0; l < levels; ++l) {
    if (occurrences[l] == 0.0) {
      out.utilization[l].assign(experts[l], 1.0 / static_cast<double>(experts[l]));
      continue;
    }
    for (double& u : out.utilization[l]) u /= occurrences[l];
  }
  const std::size_t steps = gcfg.schedule.steps;
  out.time_preference = ad::Tensor(steps, levels);
  std::vector<double> ts(steps);
  out.expected_level.resize(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    const auto p = gen.time_router().weights(t);
    double e = 0.0;
    for (std::size_t l = 0; l < levels; ++l) {
      out.time_preference(t, l) = p[l];
      e += static_cast<double>(l) * p[l];
    }
    out.expected_level[t] = e;
    ts[t] = static_cast<double>(t);
  }
  out.spearman_level_time = steps > 1 ? spearman(out.expected_level, ts) : 0.0;
  return out;
}

std::string routing_trace_csv(const diffusion::SampleTrace& trace,
                              std::span<const std::uint64_t> ids, std::size_t tokens) {
  std::ostringstream out;
  out << "item,t,kind,row,col,value\n";
  for (const auto& step : trace.steps) {
    if (step.p_t.rows() != ids.size()) throw ShapeError("routing_trace_csv: one id per traced item");
    for (std::size_t b = 0; b < ids.size(); ++b) {
      for (std::size_t l = 0; l < step.p_t.cols(); ++l)
        out << ids[b] << ',' << step.t << ",p_t,0," << l << ',' << format_double(step.p_t(b, l)) << '\n';
      for (std::size_t tok = 0; tok < tokens; ++tok)
        for (std::size_t j = 0; j < step.counts.at(b); ++j)
          out << ids[b] << ',' << step.t << ",attention," << tok << ',' << j << ','
              << format_double(step.attention(b * tokens + tok, j)) << '\n';
    }
  }
  return out.str();
}

std::vector<std::size_t> consensus_partition(const moe::MoeEncoder& encoder,
                                             const synth::Dataset& data, std::size_t groups) {
  const std::size_t v = data.voxels;
  if (groups == 0 || groups > v) throw ConfigError("consensus_partition: bad group count");
  const std::size_t last = encoder.config().levels - 1;
  Matrix together = Matrix::Zero(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(v));
  constexpr std::size_t kChunk = 256;
  for (std::size_t begin = 0; begin < data.size(); begin += kChunk) {
    const std::size_t end = std::min(data.size(), begin + kChunk);
    std::vector<std::size_t> items(end - begin);
    std::iota(items.begin(), items.end(), begin);
    ad::Tape tape;
    const auto fwd = encoder.forward(tape, tape.constant(voxel_column(data, items)), items.size(),
                                     {.binding = ad::Binding::kFrozen});
    for (const auto& routing : fwd.routing)
      for (const auto& set : routing.sets.at(last))
        for (std::size_t a : set)
          for (std::size_t b : set) together(a, b) += 1.0;
  }

  // Average-linkage agglomeration on co-assignment frequency.
  std::vector<std::vector<std::size_t>> clusters;
  for (std::size_t i = 0; i < v; ++i) clusters.push_back({i});
  while (clusters.size() > groups) {
    double best = -1.0;
    std::size_t ba = 0, bb = 1;
    for (std::size_t a = 0; a < clusters.size(); ++a) {
      for (std::size_t b = a + 1; b < clusters.size(); ++b) {
        double s = 0.0;
        for (std::size_t i : clusters[a])
          for (std::size_t j : clusters[b]) s += together(i, j);
        s /= static_cast<double>(clusters[a].size() * clusters[b].size());
        if (s > best) {
          best = s;
          ba = a;
          bb = b;
        }
      }
    }
    clusters[ba].insert(clusters[ba].end(), clusters[bb].begin(), clusters[bb].end());
    clusters.erase(clusters.begin() + static_cast<std::ptrdiff_t>(bb));
  }
  return labels_from_sets(clusters, v);
}

PartitionScore partition_recovery(const moe::MoeEncoder& encoder, const RunData& data,
                                  std::size_t random_partitions, std::uint64_t seed) {
  const auto planted = data.subject.observed_groups(data.world);
  const std::size_t groups = data.world.spec.groups;
  const std::size_t v = data.test.voxels;
  PartitionScore out;
  out.rand_index = rand_index(consensus_partition(encoder, data.test, groups), planted);

  const std::size_t last = encoder.config().levels - 1;
  for (std::size_t i = 0; i < data.test.size(); ++i) {
    const auto [emb, routing] = encoder.encode(data.test.samples[i].x);
    out.mean_sample_rand += rand_index(labels_from_sets(routing.sets.at(last), v), planted);
  }
  out.mean_sample_rand /= static_cast<double>(data.test.size());

  ad::RngStream rng(seed, 0x50415254);
  std::vector<double> chance;
  for (std::size_t k = 0; k < random_partitions; ++k)
    chance.push_back(rand_index(random_balanced_partition(v, groups, rng), planted));
  if (!chance.empty()) {
    out.chance_mean = std::accumulate(chance.begin(), chance.end(), 0.0) / static_cast<double>(chance.size());
    double var = 0.0;
    for (double c : chance) var += (c - out.chance_mean) * (c - out.chance_mean);
    out.chance_sd = std::sqrt(var / static_cast<double>(chance.size()));
  }
  return out;
}

SamplerScore sampler_eval(const diffusion::Generator& gen, const moe::MoeEncoder& encoder,
                          const RunData& data, std::size_t items,
                          const diffusion::GenConfig& sampling, std::size_t batch) {
  items = std::min(items, data.test.size());
  if (items == 0 || batch == 0) throw ConfigError("sampler_eval: need items and batch >= 1");
  const auto subset = data.test.head(items);
  const auto tables = expert_tables(encoder, subset);
  diffusion::GenConfig uncond = sampling;
  uncond.guidance = 0.0;
  SamplerScore out;
  for (std::size_t begin = 0; begin < items; begin += batch) {
    const std::size_t end = std::min(items, begin + batch);
    std::vector<const router::ExpertTable*> ptrs;
    std::vector<std::uint64_t> ids;
    for (std::size_t i = begin; i < end; ++i) {
      ptrs.push_back(&tables[i]);
      ids.push_back(i);
    }
    const auto cond = diffusion::sample(gen, ptrs, ids, sampling);
    const auto free = diffusion::sample(gen, ptrs, ids, uncond);
    for (std::size_t i = begin; i < end; ++i) {
      const auto truth = synth::stimulus_latent(data.world, subset.samples[i].s);
      out.mse_conditional += mse(cond[i - begin].data(), truth.data());
      out.mse_unconditional += mse(free[i - begin].data(), truth.data());
    }
  }
  out.mse_conditional /= static_cast<double>(items);
  out.mse_unconditional /= static_cast<double>(items);
  return out;
}

}  // namespace mrb::harness
