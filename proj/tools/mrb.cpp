#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mrb/error.hpp"
#include "mrb/harness/checkpoint.hpp"
#include "mrb/harness/config.hpp"
#include "mrb/harness/data.hpp"
#include "mrb/harness/evaluate.hpp"
#include "mrb/harness/metrics.hpp"
#include "mrb/harness/train.hpp"
#include "mrb/synth/dataset_io.hpp"

namespace fs = std::filesystem;
using namespace mrb;
using namespace mrb::harness;

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kConfigExit = 2;
constexpr int kDivergenceExit = 3;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::string checkpoint;
};

RunConfig load_config(const Common& c, const Checkpoint* ckpt = nullptr) {
  RunConfig cfg = !c.config.empty() ? RunConfig::load(c.config) : ckpt ? config_of(*ckpt) : RunConfig{};
  if (c.seed) cfg.seed = *c.seed;
  cfg.validate();
  return cfg;
}

Checkpoint require_checkpoint(const Common& c) {
  if (c.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  return load_checkpoint(c.checkpoint);
}

void write_text(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary);
  if (!f) throw FormatError(FormatError::Kind::kIo, "cannot write " + p.string());
  f << text;
}

void finish(const fs::path& out, const RunConfig& cfg, const MetricsReport& report) {
  report.write(out);
  write_text(out / "config.json", cfg.to_json());
  for (const auto& [k, v] : report.summary) std::cout << k << " = " << format_double(v) << "\n";
}

int gen_data(const Common& c, std::uint64_t subject) {
  const auto cfg = load_config(c);
  const auto data = prepare_data(cfg, subject);
  const fs::path out = c.out;
  fs::create_directories(out);
  synth::save_dataset(out / "train.mrbd", data.train);
  synth::save_dataset(out / "test.mrbd", data.test);
  synth::save_manifest(out / "train.mrbd", {cfg.world, data.subject.id, cfg.data.train_seed, data.train.size(), "train"});
  synth::save_manifest(out / "test.mrbd", {cfg.world, data.subject.id, cfg.data.test_seed, data.test.size(), "test"});
  std::ostringstream groups;
  groups << "voxel,group\n";
  const auto planted = data.subject.observed_groups(data.world);
  for (std::size_t i = 0; i < planted.size(); ++i) groups << i << ',' << planted[i] << '\n';
  write_text(out / "planted_groups.csv", groups.str());
  write_text(out / "config.json", cfg.to_json());
  std::cout << "wrote " << data.train.size() << " train and " << data.test.size() << " test samples to " << out.string() << "\n";
  return kOk;
}

int train_stage1_cmd(const Common& c) {
  const auto cfg = load_config(c);
  const auto data = prepare_data(cfg);
  auto result = train_stage1(cfg, data);
  save_checkpoint(fs::path(c.out) / "checkpoint", to_checkpoint(result.model, cfg, "stage1", cfg.stage1.steps, result.report));
  finish(c.out, cfg, result.report);
  return kOk;
}

int train_stage2_cmd(const Common& c) {
  const auto ckpt = require_checkpoint(c);
  const auto cfg = load_config(c, &ckpt);
  const auto model = from_checkpoint(ckpt);
  const auto data = prepare_data(cfg);
  auto result = train_stage2(cfg, model, data);
  save_checkpoint(fs::path(c.out) / "checkpoint", to_checkpoint(result.model, cfg, "stage2", cfg.stage2.steps, result.report));
  finish(c.out, cfg, result.report);
  return kOk;
}

int finetune_cmd(const Common& c, std::optional<std::uint64_t> subject, std::vector<double> fractions) {
  const auto ckpt = require_checkpoint(c);
  auto cfg = load_config(c, &ckpt);
  if (subject) cfg.finetune.subject = *subject;
  if (fractions.empty()) fractions = cfg.finetune.fractions;
  const auto model = from_checkpoint(ckpt);
  const auto data = prepare_data(cfg, cfg.finetune.subject);
  const auto source = prepare_data(cfg);
  MetricsReport all;
  for (double f : fractions) {
    auto result = finetune_routers(cfg, model, data, f, &source.train);
    const std::string tag = "fraction_" + format_double(f);
    save_checkpoint(fs::path(c.out) / tag / "checkpoint",
                    to_checkpoint(result.model, cfg, "finetune", cfg.finetune.steps, result.report));
    result.report.write(fs::path(c.out) / tag);
    all.merge(result.report, tag + "/");
  }
  finish(c.out, cfg, all);
  return kOk;
}

int sample_cmd(const Common& c) {
  const auto ckpt = require_checkpoint(c);
  const auto cfg = load_config(c, &ckpt);
  const auto model = from_checkpoint(ckpt);
  if (!model.generator) throw ConfigError("sampling needs a stage-2 checkpoint");
  const auto data = prepare_data(cfg);
  const auto subset = data.test.head(cfg.sample.items);
  const auto tables = expert_tables(model.encoder, subset);
  std::ostringstream csv;
  csv << "item,token,dim,value\n";
  for (std::size_t begin = 0; begin < subset.size(); begin += cfg.sample.batch) {
    const std::size_t end = std::min(subset.size(), begin + cfg.sample.batch);
    std::vector<const router::ExpertTable*> ptrs;
    std::vector<std::uint64_t> ids;
    for (std::size_t i = begin; i < end; ++i) {
      ptrs.push_back(&tables[i]);
      ids.push_back(i);
    }
    const auto z = diffusion::sample(*model.generator, ptrs, ids, cfg.sample.gen);
    for (std::size_t b = 0; b < z.size(); ++b)
      for (std::size_t r = 0; r < z[b].rows(); ++r)
        for (std::size_t d = 0; d < z[b].cols(); ++d)
          csv << ids[b] << ',' << r << ',' << d << ',' << format_double(z[b](r, d)) << '\n';
  }
  write_text(fs::path(c.out) / "samples.csv", csv.str());
  const auto s = sampler_eval(*model.generator, model.encoder, data, cfg.sample.items, cfg.sample.gen, cfg.sample.batch);
  MetricsReport report;
  report.set("mse_conditional", s.mse_conditional);
  report.set("mse_unconditional", s.mse_unconditional);
  report.set("mse_reduction", 1.0 - s.mse_conditional / s.mse_unconditional);
  finish(c.out, cfg, report);
  return kOk;
}

int eval_cmd(const Common& c) {
  const auto ckpt = require_checkpoint(c);
  const auto cfg = load_config(c, &ckpt);
  const auto model = from_checkpoint(ckpt);
  const auto data = prepare_data(cfg);
  MetricsReport report;
  const auto put = [&](const std::string& prefix, const DecodeScores& s) {
    report.set(prefix + "cosine_img", s.cosine_img);
    report.set(prefix + "cosine_text", s.cosine_text);
    report.set(prefix + "mse_img", s.mse_img);
    report.set(prefix + "mse_text", s.mse_text);
  };
  put("", evaluate(model.encoder, data.test));
  put("ridge_", ridge_oracle(data.train, data.test));
  put("random_input_", evaluate(model.encoder, random_inputs(data.test, cfg.seed)));
  const auto p = partition_recovery(model.encoder, data, cfg.eval.random_partitions, cfg.seed);
  report.set("rand_index", p.rand_index);
  report.set("rand_index_per_sample", p.mean_sample_rand);
  report.set("rand_index_chance_mean", p.chance_mean);
  report.set("rand_index_chance_sd", p.chance_sd);
  std::ostringstream csv;
  csv << "voxel,consensus_group,planted_group\n";
  const auto consensus = consensus_partition(model.encoder, data.test, cfg.world.groups);
  const auto planted = data.subject.observed_groups(data.world);
  for (std::size_t i = 0; i < planted.size(); ++i) csv << i << ',' << consensus[i] << ',' << planted[i] << '\n';
  write_text(fs::path(c.out) / "partition.csv", csv.str());
  finish(c.out, cfg, report);
  return kOk;
}

int bottleneck_cmd(const Common& c) {
  const auto ckpt = require_checkpoint(c);
  const auto cfg = load_config(c, &ckpt);
  const auto model = from_checkpoint(ckpt);
  const auto data = prepare_data(cfg);
  const auto train_pred = predict(model.encoder, data.train);
  const auto curve = bottleneck_curve(train_pred, predict(model.encoder, data.test), data.test, cfg.eval.ranks);
  const auto noise = random_inputs(data.test, cfg.seed);
  const auto random_curve = bottleneck_curve(train_pred, predict(model.encoder, noise), noise, cfg.eval.ranks);
  MetricsReport report;
  std::ostringstream csv;
  csv << "input,rank,cosine_img\n";
  std::vector<double> ranks, cosines;
  for (const auto& pt : curve) {
    csv << "fmri," << pt.rank << ',' << format_double(pt.cosine_img) << '\n';
    report.log("bottleneck_cosine_img", pt.rank, pt.cosine_img);
    ranks.push_back(static_cast<double>(pt.rank));
    cosines.push_back(pt.cosine_img);
  }
  for (const auto& pt : random_curve) {
    csv << "random," << pt.rank << ',' << format_double(pt.cosine_img) << '\n';
    report.log("bottleneck_random_cosine_img", pt.rank, pt.cosine_img);
  }
  write_text(fs::path(c.out) / "bottleneck.csv", csv.str());
  if (ranks.size() >= 2) report.set("bottleneck_spearman", spearman(ranks, cosines));
  finish(c.out, cfg, report);
  return kOk;
}

int attribute_cmd(const Common& c) {
  const auto ckpt = require_checkpoint(c);
  const auto cfg = load_config(c, &ckpt);
  const auto model = from_checkpoint(ckpt);
  const auto data = prepare_data(cfg);
  const auto planted = data.subject.observed_groups(data.world);
  ad::RngStream rng(cfg.seed, 0x41545452);
  const auto baselines = draw_baselines(data.train, cfg.eval.n_baselines, rng);
  std::ostringstream csv;
  csv << "item,voxel,planted_group,attribution\n";
  MetricsReport report;
  const std::size_t items = std::min(cfg.eval.attribute_items, data.test.size());
  for (std::size_t i = 0; i < items; ++i) {
    const auto& smp = data.test.samples[i];
    const auto readout = encoder_readout(model.encoder, smp.y_img);
    const auto attr = expected_gradients(readout, smp.x, baselines, cfg.eval.n_interp, rng);
    std::vector<double> grad(smp.x.size());
    double base_mean = 0.0;
    for (const auto& b : baselines) base_mean += readout(b, grad);
    base_mean /= static_cast<double>(baselines.size());
    double total = 0.0;
    for (std::size_t v = 0; v < attr.size(); ++v) {
      total += attr[v];
      csv << i << ',' << v << ',' << planted[v] << ',' << format_double(attr[v]) << '\n';
    }
    report.log("attribution_sum", i, total);
    report.log("readout_gap", i, readout(smp.x, grad) - base_mean);
  }
  write_text(fs::path(c.out) / "attributions.csv", csv.str());
  finish(c.out, cfg, report);
  return kOk;
}

int routing_cmd(const Common& c) {
  const auto ckpt = require_checkpoint(c);
  const auto cfg = load_config(c, &ckpt);
  const auto model = from_checkpoint(ckpt);
  if (!model.generator) throw ConfigError("routing statistics need a stage-2 checkpoint");
  const auto data = prepare_data(cfg);
  const auto tables = expert_tables(model.encoder, data.test.head(cfg.eval.routing_items));
  diffusion::SampleTrace trace;
  const auto stats = routing_stats(*model.generator, tables, cfg.sample.gen, &trace);
  std::vector<std::uint64_t> ids(tables.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
  write_text(fs::path(c.out) / "routing_trace.csv", routing_trace_csv(trace, ids, cfg.generator.denoiser.tokens));
  std::ostringstream util, pref;
  util << "level,expert,utilization\n";
  for (std::size_t l = 0; l < stats.utilization.size(); ++l)
    for (std::size_t e = 0; e < stats.utilization[l].size(); ++e)
      util << l << ',' << e << ',' << format_double(stats.utilization[l][e]) << '\n';
  pref << "t,level,weight\n";
  MetricsReport report;
  for (std::size_t t = 0; t < stats.time_preference.rows(); ++t) {
    for (std::size_t l = 0; l < stats.time_preference.cols(); ++l)
      pref << t << ',' << l << ',' << format_double(stats.time_preference(t, l)) << '\n';
    report.log("expected_level", t, stats.expected_level[t]);
  }
  write_text(fs::path(c.out) / "utilization.csv", util.str());
  write_text(fs::path(c.out) / "time_preference.csv", pref.str());
  report.set("spearman_level_time", stats.spearman_level_time);
  finish(c.out, cfg, report);
  return kOk;
}

int report_cmd(const Common& c, const std::vector<std::string>& runs) {
  if (runs.empty()) throw ConfigError("report needs at least one --run directory");
  MetricsReport merged;
  for (const auto& run : runs) {
    std::ifstream f(fs::path(run) / "metrics.json");
    if (!f) throw FormatError(FormatError::Kind::kIo, "no metrics.json in " + run);
    std::ostringstream s;
    s << f.rdbuf();
    merged.merge(MetricsReport::from_json(s.str()), fs::path(run).filename().string() + "/");
  }
  merged.write(c.out);
  for (const auto& [k, v] : merged.summary) std::cout << k << " = " << format_double(v) << "\n";
  return kOk;
}

void add_common(CLI::App* app, Common& c, bool needs_checkpoint) {
  app->add_option("--config", c.config, "RunConfig JSON file");
  app->add_option("--seed", c.seed, "override the config seed");
  app->add_option("--out", c.out, "output directory");
  if (needs_checkpoint) app->add_option("--checkpoint", c.checkpoint, "checkpoint directory")->required();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical MoE fMRI encoder and routed diffusion toolkit"};
  app.require_subcommand(1);
  Common c;
  std::uint64_t subject = 0;
  std::optional<std::uint64_t> ft_subject;
  std::vector<double> fractions;
  std::vector<std::string> runs;

  auto* gen = app.add_subcommand("gen-data", "generate train/test datasets");
  add_common(gen, c, false);
  gen->add_option("--subject", subject, "subject seed (0 = canonical)");
  auto* s1 = app.add_subcommand("train-stage1", "train the MoE encoder");
  add_common(s1, c, false);
  auto* s2 = app.add_subcommand("train-stage2", "train routers and denoiser on a frozen encoder");
  add_common(s2, c, true);
  auto* ft = app.add_subcommand("finetune-routers", "adapt U and W_r to a new subject");
  add_common(ft, c, true);
  ft->add_option("--subject", ft_subject, "new subject seed");
  ft->add_option("--fraction", fractions, "training-data fractions");
  auto* sm = app.add_subcommand("sample", "draw latents with classifier-free guidance");
  add_common(sm, c, true);
  auto* ev = app.add_subcommand("eval", "decoding and partition-recovery metrics");
  add_common(ev, c, true);
  auto* bn = app.add_subcommand("bottleneck", "cosine versus principal-subspace rank");
  add_common(bn, c, true);
  auto* at = app.add_subcommand("attribute", "expected-gradients voxel attributions");
  add_common(at, c, true);
  auto* rs = app.add_subcommand("routing-stats", "expert utilization and time preference");
  add_common(rs, c, true);
  auto* rp = app.add_subcommand("report", "merge metrics from run directories");
  rp->add_option("--run", runs, "run directory")->required();
  rp->add_option("--out", c.out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigExit;
  }

  try {
    if (*gen) return gen_data(c, subject);
    if (*s1) return train_stage1_cmd(c);
    if (*s2) return train_stage2_cmd(c);
    if (*ft) return finetune_cmd(c, ft_subject, fractions);
    if (*sm) return sample_cmd(c);
    if (*ev) return eval_cmd(c);
    if (*bn) return bottleneck_cmd(c);
    if (*at) return attribute_cmd(c);
    if (*rs) return routing_cmd(c);
    if (*rp) return report_cmd(c, runs);
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    try {
      save_checkpoint(fs::path(c.out) / "diagnostic", e.diagnostic());
      std::cerr << "diagnostic checkpoint written to " << (fs::path(c.out) / "diagnostic").string() << "\n";
    } catch (const Error& inner) {
      std::cerr << "could not write diagnostic checkpoint: " << inner.what() << "\n";
    }
    return kDivergenceExit;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigExit;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kDivergenceExit;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}
