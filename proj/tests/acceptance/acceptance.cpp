// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mrb/ad/grad_check.hpp"
#include "mrb/ad/rng.hpp"
#include "mrb/diffusion/generator.hpp"
#include "mrb/error.hpp"
#include "mrb/harness/checkpoint.hpp"
#include "mrb/harness/config.hpp"
#include "mrb/harness/data.hpp"
#include "mrb/harness/evaluate.hpp"
#include "mrb/harness/metrics.hpp"
#include "mrb/harness/train.hpp"
#include "mrb/moe/encoder.hpp"
#include "mrb/moe/losses.hpp"
#include "mrb/router/space_router.hpp"
#include "mrb/router/time_router.hpp"
#include "mrb/synth/dataset_io.hpp"

namespace fs = std::filesystem;
using namespace mrb;
using namespace mrb::harness;
using ad::Tensor;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s.precision(digits);
  s << v;
  return s.str();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

Outcome check(bool pass, std::string detail) { return {pass, std::move(detail)}; }

Tensor random_tensor(ad::RngStream& rng, std::size_t r, std::size_t c) {
  Tensor t(r, c);
  for (double& v : t.data()) v = rng.normal();
  return t;
}

std::vector<unsigned char> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_bytes(const fs::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

// Every regular file under a and b, byte for byte.
bool same_tree(const fs::path& a, const fs::path& b, std::string& why) {
  std::set<fs::path> names;
  for (const auto& root : {a, b})
    for (const auto& e : fs::recursive_directory_iterator(root))
      if (e.is_regular_file()) names.insert(fs::relative(e.path(), root));
  for (const auto& n : names) {
    if (!fs::exists(a / n) || !fs::exists(b / n) || read_bytes(a / n) != read_bytes(b / n)) {
      why = n.string();
      return false;
    }
  }
  return !names.empty();
}

bool bytes_equal(const Tensor& a, const Tensor& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data().data(), b.data().data(), a.data().size() * sizeof(double)) == 0;
}

// Shared state, filled as the criteria run.
struct Suite {
  RunConfig cfg;
  std::optional<RunData> data;
  std::optional<TrainResult> stage1;
  std::optional<TrainResult> stage2;
  fs::path scratch;
};

// 1. Gradient integrity.
Outcome gradients(Suite&) {
  const auto start = Clock::now();
  double worst = 0.0;

  {
    moe::HierarchyConfig hc;
    hc.voxels = 16;
    hc.levels = 2;
    hc.voxel_embed = 2;
    hc.feature = 4;
    hc.embed = 4;
    const moe::MoeEncoder enc(hc, 31);
    ad::RngStream rng(32, 0);
    const std::size_t batch = 3;
    const Tensor x = random_tensor(rng, batch * hc.voxels, 1);
    const Tensor gi = random_tensor(rng, batch, hc.embed);
    const Tensor gt = random_tensor(rng, batch, hc.embed);
    std::vector<moe::HierarchyAssignment> routing;
    {
      ad::Tape tape;
      routing = enc.forward(tape, tape.constant(x), batch).routing;
    }
    const ad::ScalarFn f = [&](ad::Tape& tape, std::span<const ad::Var> in) {
      const std::vector<ad::Var> bound(in.begin(), in.end());
      const auto fwd = enc.forward(tape, tape.constant(x), batch,
                                   {.fixed_routing = &routing, .bound_params = &bound});
      return moe::stage1_loss(fwd, tape.constant(gi), tape.constant(gt)).total;
    };
    worst = std::max(worst, ad::grad_check(f, enc.params().values()));
  }

  {
    const router::TimeRouter time({}, 30, 12);
    const router::SpaceRouterConfig sc{.latent_width = 3, .embed = 4, .attn = 2, .cond = 3};
    const router::SpaceRouter space(sc, 8);
    const std::vector<std::size_t> ts{0, 9, 15, 29};
    const Tensor guide = time.guide(ts);
    ad::RngStream rng(9, 0);
    const std::size_t counts[] = {2, 3};
    const std::size_t nt = time.params().size(), ns = space.params().size();
    std::vector<Tensor> inputs = time.params().values();
    for (const auto& v : space.params().values()) inputs.push_back(v);
    inputs.push_back(random_tensor(rng, 4, 3));
    inputs.push_back(random_tensor(rng, 5, 4));
    const ad::ScalarFn f = [&](ad::Tape& tape, std::span<const ad::Var> in) {
      const std::vector<ad::Var> bt(in.begin(), in.begin() + nt);
      const std::vector<ad::Var> bs(in.begin() + nt, in.begin() + nt + ns);
      const auto kl = router::kl_penalty(time.weights(tape, ts, {.bound = &bt}), guide);
      const auto out = space.condition(tape, in[nt + ns], 2, in[nt + ns + 1], counts, {.bound = &bs});
      return ad::add(kl, ad::sum(ad::mul(out.condition, out.condition)));
    };
    worst = std::max(worst, ad::grad_check(f, inputs));
  }

  for (auto mode : {router::LevelMode::kSoft, router::LevelMode::kHard}) {
    diffusion::GeneratorConfig g;
    g.schedule = {.steps = 2};
    g.time = {.levels = 2, .time_width = 4, .key_width = 3, .mode = mode};
    g.space = {.latent_width = 3, .embed = 4, .attn = 2, .cond = 3};
    g.denoiser = {.tokens = 2, .width = 3, .cond = 3, .hidden = 4, .mlp = 5, .time_width = 4,
                  .blocks = 2, .steps = 2};
    g.cond_dropout = 0.5;
    const diffusion::Generator gen(g, 18);
    ad::RngStream rng(19, 0);
    std::vector<router::ExpertTable> tables;
    std::vector<Tensor> z0;
    for (int i = 0; i < 4; ++i) {
      moe::ExpertEmbeddingSet set(2);
      for (std::size_t l = 0; l < 2; ++l)
        for (std::size_t j = 0; j < (std::size_t{2} << l); ++j) set[l].push_back({rng.normals(4), rng.normals(4)});
      tables.push_back(router::expert_table(set));
      z0.push_back(random_tensor(rng, 2, 3));
    }
    std::vector<const router::ExpertTable*> ptrs;
    for (const auto& t : tables) ptrs.push_back(&t);
    const std::size_t nt = gen.time_router().params().size();
    const std::size_t ns = gen.space_router().params().size();
    std::vector<Tensor> inputs = gen.time_router().params().values();
    for (const auto& v : gen.space_router().params().values()) inputs.push_back(v);
    for (const auto& v : gen.denoiser().params().values()) inputs.push_back(v);
    const ad::ScalarFn f = [&](ad::Tape& tape, std::span<const ad::Var> in) {
      const std::vector<ad::Var> bt(in.begin(), in.begin() + nt);
      const std::vector<ad::Var> bs(in.begin() + nt, in.begin() + nt + ns);
      const std::vector<ad::Var> bd(in.begin() + nt + ns, in.end());
      ad::RngStream noise(20, 0);
      return diffusion::stage2_loss(tape, gen, ptrs, z0, noise, 0.1,
                                    {{.bound = &bt}, {.bound = &bs}, {.bound = &bd}})
          .total;
    };
    worst = std::max(worst, ad::grad_check(f, inputs));
  }

  const double secs = seconds_since(start);
  return check(worst <= 1e-4 && secs < 60.0,
               "max relative error " + fmt(worst, 3) + " (<= 1e-4), " + fmt(secs, 3) + " s (< 60 s)");
}

// 2. Routing structure, guide values, fixed schedule endpoints.
Outcome routing_structure(Suite&) {
  ad::RngStream rng(21, 0);
  std::size_t violations = 0;
  for (int trial = 0; trial < 50; ++trial) {
    moe::HierarchyConfig c;
    c.voxels = 40 + rng.below(100);
    const moe::MoeEncoder enc(c, 100 + static_cast<std::uint64_t>(trial));
    const auto [emb, asg] = enc.encode(rng.normals(c.voxels));
    for (std::size_t l = 0; l < c.levels; ++l) {
      std::set<std::size_t> all;
      for (const auto& s : asg.sets[l])
        for (std::size_t i : s) violations += !all.insert(i).second;
      violations += all.size() != c.voxels;
      // Children of one parent (the root for level 0) hold k or k+1 voxels,
      // with exactly m mod b of size k+1.
      const std::size_t blocks = l == 0 ? 1 : c.experts_at(l - 1);
      const std::size_t b = c.experts_at(l) / blocks;
      for (std::size_t p = 0; p < blocks; ++p) {
        std::set<std::size_t> parent;
        if (l == 0) {
          for (std::size_t i = 0; i < c.voxels; ++i) parent.insert(i);
        } else {
          parent.insert(asg.sets[l - 1][p].begin(), asg.sets[l - 1][p].end());
        }
        const std::size_t m = parent.size(), k = m / b;
        std::size_t big = 0;
        for (std::size_t j = p * b; j < (p + 1) * b; ++j) {
          const auto& s = asg.sets[l][j];
          violations += s.size() != k && s.size() != k + 1;
          big += s.size() == k + 1;
          for (std::size_t i : s) violations += !parent.contains(i);
        }
        violations += big != m % b;
      }
    }
  }
  const auto g = router::guide_distribution(15, 30, 4, 1.0);
  const double want[] = {0.2583, 0.4258, 0.2583, 0.0576};
  double guide_err = 0.0;
  for (std::size_t l = 0; l < 4; ++l) guide_err = std::max(guide_err, std::abs(g[l] - want[l]));
  const std::vector<double> flat(4, 0.25);
  const auto first = router::select_level(router::LevelMode::kFixed, flat, 0, 30, 4).level;
  const auto last = router::select_level(router::LevelMode::kFixed, flat, 29, 30, 4).level;
  const bool pass = violations == 0 && guide_err < 5e-5 && first == 0 && last == 3;
  return check(pass, "50 models, " + std::to_string(violations) + " structure violations; guide [" +
                         fmt(g[0]) + ", " + fmt(g[1]) + ", " + fmt(g[2]) + ", " + fmt(g[3]) +
                         "]; fixed schedule t=0 -> " + std::to_string(first) + ", t=29 -> " +
                         std::to_string(last));
}

// 3. Stage-1 decoding on the default world.
Outcome stage1_decoding(Suite& s) {
  s.data = prepare_data(s.cfg);
  const auto& data = *s.data;
  const auto ridge = ridge_oracle(data.train, data.test);
  const auto start = Clock::now();
  s.stage1 = train_stage1(s.cfg, data);
  const double secs = seconds_since(start);
  const double cos = s.stage1->report.at("cosine_img");
  const auto rnd = evaluate(s.stage1->model.encoder, random_inputs(data.test, s.cfg.seed));
  const bool pass = ridge.cosine_img >= 0.95 && cos >= 0.7 && s.cfg.stage1.steps <= 10000 &&
                    secs < 900.0 && std::abs(rnd.cosine_img) <= 0.15;
  return check(pass, "ridge oracle " + fmt(ridge.cosine_img) + " (>= 0.95); held-out cosine_img " + fmt(cos) +
                         " (>= 0.7) after " + std::to_string(s.cfg.stage1.steps) + " steps in " + fmt(secs, 3) +
                         " s; random-input cosine " + fmt(rnd.cosine_img, 3) + " (|.| <= 0.15)");
}

struct Curve {
  std::vector<double> ranks, cosines;
};

Curve curve_of(const moe::MoeEncoder& enc, const synth::Dataset& train, const synth::Dataset& test,
               std::span<const std::size_t> ranks) {
  Curve c;
  for (const auto& pt : bottleneck_curve(predict(enc, train), predict(enc, test), test, ranks)) {
    c.ranks.push_back(static_cast<double>(pt.rank));
    c.cosines.push_back(pt.cosine_img);
  }
  return c;
}

std::string curve_text(const Curve& c) {
  std::string out;
  for (std::size_t i = 0; i < c.cosines.size(); ++i) out += (i ? " " : "") + fmt(c.cosines[i], 3);
  return out;
}

// 4. Bottleneck sensitivity, asserted on full-rank targets (latent width = D).
Outcome bottleneck(Suite& s) {
  const std::vector<std::size_t> ranks{1, 2, 4, 8, 16, 32};
  const auto def = curve_of(s.stage1->model.encoder, s.data->train, s.data->test, ranks);
  RunConfig cfg = s.cfg;
  cfg.world.latent = cfg.world.target;
  const auto data = prepare_data(cfg);
  const auto model = train_stage1(cfg, data).model;
  const auto c = curve_of(model.encoder, data.train, data.test, ranks);
  const double rho = spearman(c.ranks, c.cosines);
  const bool pass = rho >= 0.9 && c.cosines.front() <= 0.5 * c.cosines.back();
  return check(pass, "latent " + std::to_string(cfg.world.latent) + ": cosine by rank [" + curve_text(c) +
                         "], Spearman " + fmt(rho) + " (>= 0.9), rank-1 " + fmt(c.cosines.front()) +
                         " (<= " + fmt(0.5 * c.cosines.back()) + "); default world [" + curve_text(def) +
                         "], Spearman " + fmt(spearman(def.ranks, def.cosines)));
}

// 5. Router-only finetuning on a permuted subject.
Outcome router_finetune(Suite& s) {
  const auto data = prepare_data(s.cfg, s.cfg.finetune.subject);
  const double full = train_stage1(s.cfg, data).report.at("cosine_img");
  const auto& base = s.stage1->model;
  const auto quarter = finetune_routers(s.cfg, base, data, 0.25, &s.data->train);
  const auto all = finetune_routers(s.cfg, base, data, 1.0, &s.data->train);
  bool experts_same = true;
  for (const auto* r : {&quarter, &all})
    for (auto id : base.encoder.expert_param_ids())
      experts_same = experts_same && bytes_equal(r->model.encoder.params().value(id), base.encoder.params().value(id));
  const double q = quarter.report.at("cosine_img") / full;
  const double a = all.report.at("cosine_img") / full;
  const bool pass = q >= 0.90 && a >= 0.97 && experts_same;
  return check(pass, "full retrain " + fmt(full) + "; 25% data recovers " + fmt(100 * q, 3) +
                         "% (>= 90), 100% data " + fmt(100 * a, 3) + "% (>= 97); experts byte-identical: " +
                         (experts_same ? "yes" : "no") + "; trainable fraction " +
                         fmt(all.report.at("trainable_fraction"), 3) + " (" +
                         fmt(all.report.at("trainable_params"), 6) + " / " +
                         fmt(all.report.at("total_params"), 6) + ")");
}

// 6. Coarse-to-fine routing after stage 2.
Outcome coarse_to_fine(Suite& s) {
  const double lambda = s.cfg.generator.time.kl_weight;
  s.stage2 = train_stage2(s.cfg, s.stage1->model, *s.data);
  const auto& model = s.stage2->model;
  const auto tables = expert_tables(model.encoder, s.data->test.head(s.cfg.eval.routing_items));
  const auto stats = routing_stats(*model.generator, tables, s.cfg.sample.gen);
  const double rho = stats.spearman_level_time;
  if (lambda == 0.0) return check(true, "lambda_T = 0, waived; Spearman " + fmt(rho));
  return check(rho >= 0.95 && lambda == 0.1,
               "lambda_T " + fmt(lambda) + ", Spearman(E[level], t) " + fmt(rho) + " (>= 0.95); E[level] t=0 " +
                   fmt(stats.expected_level.front(), 3) + ", t=T-1 " + fmt(stats.expected_level.back(), 3));
}

// 7. Partition recovery.
Outcome partition(Suite& s) {
  const auto p = partition_recovery(s.stage1->model.encoder, *s.data, 100, s.cfg.seed);
  return check(p.rand_index >= p.chance_mean + 0.1,
               "consensus Rand index " + fmt(p.rand_index) + " vs chance " + fmt(p.chance_mean) + " (sd " +
                   fmt(p.chance_sd, 2) + "), margin " + fmt(p.rand_index - p.chance_mean, 3) +
                   " (>= 0.1); per-sample " + fmt(p.mean_sample_rand));
}

// 8. Diffusion sanity.
Outcome diffusion_sanity(Suite& s) {
  const auto& model = s.stage2->model;
  const auto score = sampler_eval(*model.generator, model.encoder, *s.data, 256, s.cfg.sample.gen, s.cfg.sample.batch);
  const double reduction = 1.0 - score.mse_conditional / score.mse_unconditional;

  diffusion::Generator zero = *model.generator;
  auto& dp = zero.denoiser().params();
  for (ad::ParamId id = 0; id < dp.size(); ++id) dp.value(id).fill(0.0);
  const auto& test = s.data->test;
  const auto tables = expert_tables(model.encoder, test);
  std::vector<const router::ExpertTable*> ptrs;
  for (const auto& t : tables) ptrs.push_back(&t);
  const auto items = iota(test.size());
  ad::RngStream rng(s.cfg.seed, 0x5A45524F);
  ad::Tape tape;
  const double chi = diffusion::stage2_loss(tape, zero, ptrs, latents(s.data->world, test, items), rng, 0.0).denoise;

  return check(reduction >= 0.3 && std::abs(chi - 64.0) <= 3.0,
               "sampled z0 MSE conditional " + fmt(score.mse_conditional) + " vs unconditional " +
                   fmt(score.mse_unconditional) + " at guidance " + fmt(s.cfg.sample.gen.guidance) + ", reduction " +
                   fmt(100 * reduction, 3) + "% (>= 30); zero-denoiser loss " + fmt(chi) + " (64 +/- 3)");
}

// 9. Attribution correctness.
Outcome attribution(Suite& s) {
  ad::RngStream rng(s.cfg.seed, 0x41545452);
  const std::size_t v = s.cfg.world.voxels;
  const auto w = rng.normals(v);
  const auto x = rng.normals(v);
  std::vector<std::vector<double>> base;
  for (int i = 0; i < 4; ++i) base.push_back(rng.normals(v));
  const Readout linear = [&w](std::span<const double> p, std::span<double> g) {
    double f = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      f += w[i] * p[i];
      g[i] = w[i];
    }
    return f;
  };
  const auto attr = expected_gradients(linear, x, base, 64, rng);
  double identity = 0.0;
  for (std::size_t i = 0; i < v; ++i) {
    double mean_b = 0.0;
    for (const auto& b : base) mean_b += b[i];
    mean_b /= static_cast<double>(base.size());
    identity = std::max(identity, std::abs(attr[i] - w[i] * (x[i] - mean_b)));
  }
  const std::vector<std::vector<double>> zero{std::vector<double>(v, 0.0)};
  const auto attr0 = expected_gradients(linear, x, zero, 64, rng);
  for (std::size_t i = 0; i < v; ++i) identity = std::max(identity, std::abs(attr0[i] - w[i] * x[i]));

  // Completeness on the trained encoder's readout with routing held fixed.
  const auto& enc = s.stage1->model.encoder;
  const auto& test = s.data->test;
  const auto baselines = draw_baselines(s.data->train, s.cfg.eval.n_baselines, rng);
  double worst = 0.0;
  std::vector<double> g(v);
  const std::size_t items = s.cfg.eval.attribute_items;
  for (std::size_t i = 0; i < items; ++i) {
    const auto& smp = test.samples[i];
    const auto f = frozen_routing_readout(enc, smp.y_img, smp.x);
    const auto a = expected_gradients(f, smp.x, baselines, 64, rng);
    double fb = 0.0;
    for (const auto& b : baselines) fb += f(b, g);
    fb /= static_cast<double>(baselines.size());
    const double gap = f(smp.x, g) - fb;
    const double total = std::accumulate(a.begin(), a.end(), 0.0);
    worst = std::max(worst, std::abs(total - gap) / std::abs(gap));
  }
  return check(identity <= 1e-10 && worst <= 0.05,
               "linear identity max error " + fmt(identity, 3) + " (<= 1e-10); completeness at n_interp=64 worst " +
                   fmt(100 * worst, 3) + "% over " + std::to_string(items) + " items (<= 5%)");
}

// 10. Determinism and formats.
FormatError::Kind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const FormatError& e) {
    return e.kind();
  }
  throw Error("load unexpectedly succeeded");
}

void replay(const RunConfig& cfg, const fs::path& dir) {
  const auto data = prepare_data(cfg);
  const auto s1 = train_stage1(cfg, data);
  save_checkpoint(dir / "stage1", to_checkpoint(s1.model, cfg, "stage1", cfg.stage1.steps, s1.report));
  s1.report.write(dir / "stage1");
  const auto s2 = train_stage2(cfg, s1.model, data);
  save_checkpoint(dir / "stage2", to_checkpoint(s2.model, cfg, "stage2", cfg.stage2.steps, s2.report));
  s2.report.write(dir / "stage2");
  const auto sub = prepare_data(cfg, cfg.finetune.subject);
  const auto ft = finetune_routers(cfg, s1.model, sub, 0.25, &data.train);
  save_checkpoint(dir / "finetune", to_checkpoint(ft.model, cfg, "finetune", cfg.finetune.steps, ft.report));
  ft.report.write(dir / "finetune");
}

int run_tool(const std::string& args) {
  const std::string cmd = std::string(MRB_TOOL_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome determinism(Suite& s) {
  const fs::path root = s.scratch / "determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  std::vector<std::string> notes;
  bool pass = true;
  auto need = [&](bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      notes.push_back("FAILED " + what);
    }
  };

  RunConfig cfg = s.cfg;
  cfg.data.train = 512;
  cfg.data.test = 64;
  cfg.stage1.steps = 120;
  cfg.stage2.steps = 60;
  cfg.stage2.log_every = 20;
  cfg.finetune.steps = 30;
  replay(cfg, root / "a");
  replay(cfg, root / "b");
  std::string why;
  need(same_tree(root / "a", root / "b", why), "library replay differs at " + why);

  // The command-line tool, twice, from a config file.
  const fs::path cfg_file = root / "config.json";
  write_bytes(cfg_file, [&] {
    const auto t = cfg.to_json();
    return std::vector<unsigned char>(t.begin(), t.end());
  }());
  for (const char* run : {"cli_a", "cli_b"}) {
    const fs::path out = root / run;
    const std::string common = " --config " + cfg_file.string() + " --seed 3 --out ";
    need(run_tool("gen-data" + common + (out / "data").string()) == 0, "gen-data exit");
    need(run_tool("train-stage1" + common + (out / "s1").string()) == 0, "train-stage1 exit");
    need(run_tool("eval --checkpoint " + (out / "s1" / "checkpoint").string() + common + (out / "eval").string()) == 0,
         "eval exit");
  }
  need(same_tree(root / "cli_a", root / "cli_b", why), "CLI replay differs at " + why);
  const fs::path bad = root / "bad.json";
  write_bytes(bad, {'{', '"', 'x', '"', ':', '1', '}'});
  need(run_tool("train-stage1 --config " + bad.string() + " --out " + (root / "bad").string()) == 2,
       "config error exit code");

  // Dataset round trip and corruption.
  const auto& data = *s.data;
  const fs::path ds = root / "train.mrbd";
  synth::save_dataset(ds, data.train);
  const auto back = synth::load_dataset(ds);
  synth::save_dataset(root / "again.mrbd", back);
  need(read_bytes(ds) == read_bytes(root / "again.mrbd"), "dataset round trip bytes");
  bool values_exact = back.size() == data.train.size();
  for (std::size_t i = 0; values_exact && i < back.size(); ++i)
    for (std::size_t j = 0; j < back.voxels; ++j)
      values_exact = values_exact &&
                     back.samples[i].x[j] == static_cast<double>(static_cast<float>(data.train.samples[i].x[j]));
  need(values_exact, "dataset values equal their float32 rounding");
  const auto ds_bytes = read_bytes(ds);
  auto corrupt_ds = [&](auto edit) {
    auto b = ds_bytes;
    edit(b);
    write_bytes(root / "bad.mrbd", b);
    return kind_of([&] { synth::load_dataset(root / "bad.mrbd"); });
  };
  using K = FormatError::Kind;
  const K d_magic = corrupt_ds([](auto& b) { b[0] = 'Z'; });
  const K d_version = corrupt_ds([](auto& b) { b[4] = 7; });
  const K d_trunc = corrupt_ds([](auto& b) { b.resize(b.size() - 3); });
  const K d_missing = kind_of([&] { synth::load_dataset(root / "missing.mrbd"); });
  need(d_magic == K::kBadMagic && d_version == K::kVersionMismatch && d_trunc == K::kTruncated && d_missing == K::kIo,
       "dataset error kinds");

  // Checkpoint round trip and corruption.
  const auto ckpt = to_checkpoint(s.stage1->model, s.cfg, "stage1", s.cfg.stage1.steps, s.stage1->report);
  save_checkpoint(root / "ckpt", ckpt);
  const auto loaded = load_checkpoint(root / "ckpt");
  need(loaded == ckpt, "checkpoint round trip values");
  save_checkpoint(root / "ckpt2", loaded);
  need(same_tree(root / "ckpt", root / "ckpt2", why), "checkpoint round trip bytes");
  const auto blob = read_bytes(root / "ckpt" / "tensors.bin");
  auto corrupt_ck = [&](auto edit) {
    fs::remove_all(root / "ckbad");
    fs::copy(root / "ckpt", root / "ckbad");
    auto b = blob;
    edit(b);
    write_bytes(root / "ckbad" / "tensors.bin", b);
    return kind_of([&] { load_checkpoint(root / "ckbad"); });
  };
  const K c_magic = corrupt_ck([](auto& b) { b[1] = 'Q'; });
  const K c_version = corrupt_ck([](auto& b) { b[4] = 2; });
  const K c_trunc = corrupt_ck([](auto& b) { b.resize(b.size() - 16); });
  const K c_flip = corrupt_ck([](auto& b) { b[b.size() - 5] ^= 0x10; });
  const K c_missing = kind_of([&] { load_checkpoint(root / "nowhere"); });
  need(c_magic == K::kBadMagic && c_version == K::kVersionMismatch && c_trunc == K::kTruncated &&
           c_flip == K::kCorrupt && c_missing == K::kIo,
       "checkpoint error kinds");
  const std::set<K> kinds{c_magic, c_version, c_trunc, c_flip, c_missing};

  std::string detail = "library and CLI replays byte-identical, dataset and checkpoint round trips bit-exact, " +
                       std::to_string(kinds.size()) + " distinct corruption errors";
  if (!pass) {
    detail.clear();
    for (const auto& n : notes) detail += (detail.empty() ? "" : "; ") + n;
  }
  return check(pass, detail);
}

}  // namespace

int main() {
  Suite suite;
  suite.scratch = fs::temp_directory_path() / "mrb_acceptance";
  fs::create_directories(suite.scratch);

  const std::vector<std::pair<std::string, std::function<Outcome(Suite&)>>> criteria{
      {"gradient integrity", gradients},
      {"routing structure", routing_structure},
      {"stage-1 decoding", stage1_decoding},
      {"bottleneck sensitivity", bottleneck},
      {"router-only finetuning", router_finetune},
      {"coarse-to-fine routing", coarse_to_fine},
      {"partition recovery", partition},
      {"diffusion sanity", diffusion_sanity},
      {"attribution correctness", attribution},
      {"determinism and formats", determinism},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto start = Clock::now();
    Outcome out;
    try {
      out = criteria[i].second(suite);
    } catch (const std::exception& e) {
      out = {false, std::string("error: ") + e.what()};
    }
    failed += !out.pass;
    std::cout << (out.pass ? "PASS" : "FAIL") << "  criterion " << (i + 1) << " " << criteria[i].first << ": "
              << out.detail << " [" << fmt(seconds_since(start), 3) << " s]" << std::endl;
  }
  std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed" << std::endl;
  return failed ? 1 : 0;
}
