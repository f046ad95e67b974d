#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>

#include "mrb/error.hpp"
#include "mrb/harness/align.hpp"
#include "mrb/harness/checkpoint.hpp"
#include "mrb/harness/config.hpp"
#include "mrb/harness/data.hpp"
#include "mrb/harness/evaluate.hpp"
#include "mrb/harness/metrics.hpp"
#include "mrb/harness/train.hpp"

namespace mrb::harness {
namespace {

namespace fs = std::filesystem;

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "mrb_harness_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<unsigned char> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_bytes(const fs::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

// 16 voxels in 4 groups, 2-level hierarchy, small generator.
RunConfig tiny_config() {
  RunConfig cfg;
  cfg.world.voxels = 16;
  cfg.world.groups = 4;
  cfg.world.latent = 4;
  cfg.world.target = 8;
  cfg.world.latent_tokens = 2;
  cfg.world.token_width = 4;
  cfg.data.train = 96;
  cfg.data.test = 32;
  cfg.model.voxels = 16;
  cfg.model.levels = 2;
  cfg.model.voxel_embed = 4;
  cfg.model.feature = 8;
  cfg.model.embed = 8;
  cfg.stage1.steps = 30;
  cfg.stage1.batch = 16;
  cfg.generator.time.levels = 2;
  cfg.generator.time.time_width = 8;
  cfg.generator.time.key_width = 8;
  cfg.generator.space.latent_width = 4;
  cfg.generator.space.embed = 8;
  cfg.generator.space.attn = 8;
  cfg.generator.space.cond = 8;
  cfg.generator.denoiser.tokens = 2;
  cfg.generator.denoiser.width = 4;
  cfg.generator.denoiser.cond = 8;
  cfg.generator.denoiser.hidden = 8;
  cfg.generator.denoiser.mlp = 16;
  cfg.generator.denoiser.time_width = 8;
  cfg.generator.denoiser.steps = 10;
  cfg.generator.schedule.steps = 10;
  cfg.stage2.steps = 20;
  cfg.stage2.batch = 8;
  cfg.stage2.log_every = 5;
  cfg.finetune.steps = 10;
  cfg.finetune.batch = 16;
  cfg.sample.items = 8;
  cfg.sample.gen.steps = 10;
  cfg.sample.batch = 4;
  cfg.eval.ranks = {1, 2, 4, 8};
  cfg.validate();
  return cfg;
}

// Metrics

TEST(Metrics, CosineExamples) {
  EXPECT_DOUBLE_EQ(cosine(std::vector<double>{1, 0}, std::vector<double>{0, 1}), 0.0);
  EXPECT_DOUBLE_EQ(cosine(std::vector<double>{2, 0}, std::vector<double>{3, 0}), 1.0);
  EXPECT_DOUBLE_EQ(cosine(std::vector<double>{0, 0}, std::vector<double>{3, 0}), 0.0);
}

TEST(Metrics, MseExample) {
  EXPECT_DOUBLE_EQ(mse(std::vector<double>{1, 2}, std::vector<double>{3, 2}), 2.0);
}

TEST(Metrics, RandIndexHandValue) {
  // {01|23} vs {02|13}: only pairs 03 and 12 agree.
  const std::vector<std::size_t> a{0, 0, 1, 1}, b{0, 1, 0, 1};
  EXPECT_DOUBLE_EQ(rand_index(a, b), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(rand_index(a, a), 1.0);
}

TEST(Metrics, MidranksTies) {
  const auto r = midranks(std::vector<double>{3, 1, 3, 2});
  EXPECT_EQ(r, (std::vector<double>{3.5, 1.0, 3.5, 2.0}));
}

TEST(Metrics, SpearmanExamples) {
  const std::vector<double> x{1, 2, 3, 4, 5, 6};
  EXPECT_DOUBLE_EQ(spearman(x, std::vector<double>{1, 4, 9, 16, 25, 36}), 1.0);
  EXPECT_DOUBLE_EQ(spearman(x, std::vector<double>{6, 5, 4, 3, 2, 1}), -1.0);
  EXPECT_DOUBLE_EQ(spearman(x, std::vector<double>{2, 2, 2, 2, 2, 2}), 0.0);
  // One adjacent swap among six: 1 − 6·2 / (6·35).
  EXPECT_NEAR(spearman(x, std::vector<double>{1, 2, 3, 4, 6, 5}), 1.0 - 12.0 / 210.0, 1e-12);
}

TEST(Metrics, LabelsFromSetsRejectsOverlap) {
  EXPECT_EQ(labels_from_sets({{0, 2}, {1, 3}}, 4), (std::vector<std::size_t>{0, 1, 0, 1}));
  EXPECT_THROW(labels_from_sets({{0, 1}, {1, 2}}, 3), ConfigError);
  EXPECT_THROW(labels_from_sets({{0}, {1}}, 3), ConfigError);
}

TEST(Metrics, RandomBalancedPartitionSizes) {
  ad::RngStream rng(3, 4);
  const auto labels = random_balanced_partition(128, 16, rng);
  std::vector<std::size_t> counts(16, 0);
  for (auto l : labels) ++counts.at(l);
  for (auto c : counts) EXPECT_EQ(c, 8u);
}

TEST(Metrics, ReportJsonRoundTrip) {
  MetricsReport r;
  r.log("loss", 1, 0.1);
  r.log("loss", 2, 1.0 / 3.0);
  r.set("cosine_img", 0.9);
  const auto back = MetricsReport::from_json(r.to_json());
  EXPECT_EQ(back.series, r.series);
  EXPECT_EQ(back.summary, r.summary);
  EXPECT_EQ(back.to_csv(), r.to_csv());
}

TEST(Metrics, FormatDoubleRoundTrips) {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 123456789.0}) EXPECT_EQ(std::stod(format_double(v)), v);
}

TEST(Metrics, BlockMeans) {
  const std::vector<double> v{1, 3, 5, 7, 9};
  EXPECT_EQ(block_means(v, 2), (std::vector<double>{2, 6}));
  EXPECT_THROW(block_means(v, 0), ConfigError);
  EXPECT_TRUE(non_increasing(std::vector<double>{3, 2, 2, 1}));
  EXPECT_FALSE(non_increasing(std::vector<double>{3, 2, 2.5}));
}

// Config

TEST(Config, JsonRoundTrip) {
  const RunConfig cfg = tiny_config();
  EXPECT_EQ(RunConfig::from_json(cfg.to_json()).to_json(), cfg.to_json());
  const RunConfig defaults;
  EXPECT_EQ(RunConfig::from_json(defaults.to_json()).to_json(), defaults.to_json());
}

TEST(Config, MissingKeysKeepDefaults) {
  const auto cfg = RunConfig::from_json(R"({"seed": 9, "finetune": {"align": false}})");
  EXPECT_EQ(cfg.seed, 9u);
  EXPECT_FALSE(cfg.finetune.align);
  EXPECT_EQ(cfg.world.voxels, RunConfig{}.world.voxels);
}

TEST(Config, UnknownKeyRejected) {
  try {
    RunConfig::from_json(R"({"stage1": {"stepz": 3}})");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("stage1.stepz"), std::string::npos);
  }
}

TEST(Config, WrongTypeRejected) {
  EXPECT_THROW(RunConfig::from_json(R"({"seed": "one"})"), ConfigError);
  EXPECT_THROW(RunConfig::from_json(R"({"finetune": {"align": 1}})"), ConfigError);
  EXPECT_THROW(RunConfig::from_json(R"({"seed": -1})"), ConfigError);
}

TEST(Config, CrossChecks) {
  auto bad = [](auto edit) {
    RunConfig cfg;
    edit(cfg);
    EXPECT_THROW(cfg.validate(), ConfigError);
  };
  bad([](RunConfig& c) { c.model.voxels = 64; });
  bad([](RunConfig& c) { c.model.embed = 16; });
  bad([](RunConfig& c) { c.generator.time.levels = 3; });
  bad([](RunConfig& c) { c.finetune.fractions = {0.0}; });
  bad([](RunConfig& c) { c.eval.ranks = {64}; });
  bad([](RunConfig& c) { c.stage1.lr = 0.0; });
}

TEST(Config, LoadMissingFile) {
  EXPECT_THROW(RunConfig::load("/nonexistent/config.json"), Error);
}

// Checkpoint

Checkpoint sample_checkpoint() {
  const RunConfig cfg = tiny_config();
  Model model = init_model(cfg);
  model.generator.emplace(cfg.generator, ad::derive_stream(cfg.seed, 2));
  MetricsReport report;
  report.set("cosine_img", 0.25);
  report.set("inf_metric", INFINITY);
  return to_checkpoint(model, cfg, "stage2", 17, report);
}

TEST(Checkpoint, BitExactRoundTrip) {
  const auto dir = temp_dir("ckpt_roundtrip");
  const auto ckpt = sample_checkpoint();
  save_checkpoint(dir / "a", ckpt);
  const auto back = load_checkpoint(dir / "a");
  EXPECT_TRUE(back == ckpt);
  save_checkpoint(dir / "b", back);
  EXPECT_EQ(read_bytes(dir / "a" / "tensors.bin"), read_bytes(dir / "b" / "tensors.bin"));
  EXPECT_EQ(read_bytes(dir / "a" / "checkpoint.json"), read_bytes(dir / "b" / "checkpoint.json"));
}

TEST(Checkpoint, ModelRebuildsFromCheckpoint) {
  const auto ckpt = sample_checkpoint();
  const Model model = from_checkpoint(ckpt);
  ASSERT_TRUE(model.generator.has_value());
  EXPECT_TRUE(model.encoder.params() == ckpt.group("encoder"));
  EXPECT_TRUE(model.generator->denoiser().params() == ckpt.group("denoiser"));
  EXPECT_FALSE(ckpt.has_group("nothing"));
}

FormatError::Kind load_error(const fs::path& dir) {
  try {
    load_checkpoint(dir);
  } catch (const FormatError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "load succeeded";
  return FormatError::Kind::kIo;
}

TEST(Checkpoint, DistinctCorruptionErrors) {
  const auto root = temp_dir("ckpt_corrupt");
  const auto ckpt = sample_checkpoint();
  auto fresh = [&](const std::string& name) {
    save_checkpoint(root / name, ckpt);
    return root / name;
  };

  EXPECT_EQ(load_error(root / "missing"), FormatError::Kind::kIo);

  auto dir = fresh("magic");
  auto bytes = read_bytes(dir / "tensors.bin");
  bytes[0] = 'X';
  write_bytes(dir / "tensors.bin", bytes);
  EXPECT_EQ(load_error(dir), FormatError::Kind::kBadMagic);

  dir = fresh("version");
  bytes = read_bytes(dir / "tensors.bin");
  bytes[4] = 9;
  write_bytes(dir / "tensors.bin", bytes);
  EXPECT_EQ(load_error(dir), FormatError::Kind::kVersionMismatch);

  dir = fresh("truncated");
  bytes = read_bytes(dir / "tensors.bin");
  bytes.resize(bytes.size() - 8);
  write_bytes(dir / "tensors.bin", bytes);
  EXPECT_EQ(load_error(dir), FormatError::Kind::kTruncated);

  dir = fresh("flipped");
  bytes = read_bytes(dir / "tensors.bin");
  bytes[bytes.size() / 2] ^= 0x01;
  write_bytes(dir / "tensors.bin", bytes);
  EXPECT_EQ(load_error(dir), FormatError::Kind::kCorrupt);

  dir = fresh("manifest");
  write_bytes(dir / "checkpoint.json", {'{', '"'});
  EXPECT_EQ(load_error(dir), FormatError::Kind::kCorrupt);
}

TEST(Checkpoint, Fnv1aKnownValues) {
  EXPECT_EQ(fnv1a({}), 0xcbf29ce484222325ull);
  EXPECT_EQ(fnv1a({'a'}), 0xaf63dc4c8601ec8cull);
}

// Evaluation

TEST(Bottleneck, FullRankMatchesUnbottlenecked) {
  const RunConfig cfg = tiny_config();
  const auto data = prepare_data(cfg);
  const Model model = init_model(cfg);
  const auto train = predict(model.encoder, data.train);
  const auto test = predict(model.encoder, data.test);
  const std::vector<std::size_t> ranks{0, 8};
  const auto curve = bottleneck_curve(train, test, data.test, ranks);
  EXPECT_EQ(curve[0].cosine_img, 0.0);
  EXPECT_NEAR(curve[1].cosine_img, score(test, data.test).cosine_img, 1e-9);
  const std::vector<std::size_t> too_big{9};
  EXPECT_THROW(bottleneck_curve(train, test, data.test, too_big), ConfigError);
}

TEST(Ridge, NearPerfectOnDefaultWorld) {
  RunConfig cfg;
  cfg.data.train = 1024;
  cfg.data.test = 256;
  const auto data = prepare_data(cfg);
  EXPECT_GE(ridge_oracle(data.train, data.test).cosine_img, 0.95);
}

TEST(RandomInputs, KeepsMomentsAndTargets) {
  RunConfig cfg;
  cfg.data.train = 512;
  cfg.data.test = 8;
  const auto data = prepare_data(cfg);
  const auto rnd = random_inputs(data.train, 5);
  ASSERT_EQ(rnd.size(), data.train.size());
  for (std::size_t i = 0; i < rnd.size(); ++i) EXPECT_EQ(rnd.samples[i].y_img, data.train.samples[i].y_img);
  double m0 = 0.0, m1 = 0.0;
  for (std::size_t i = 0; i < rnd.size(); ++i) {
    m0 += data.train.samples[i].x[0];
    m1 += rnd.samples[i].x[0];
  }
  EXPECT_NEAR(m0 / 512.0, m1 / 512.0, 0.15);
}

Readout linear_readout(std::vector<double> w) {
  return [w](std::span<const double> x, std::span<double> g) {
    double f = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      f += w[i] * x[i];
      g[i] = w[i];
    }
    return f;
  };
}

Readout smooth_readout(std::vector<double> w) {
  return [w](std::span<const double> x, std::span<double> g) {
    double a = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) a += w[i] * x[i];
    const double t = std::tanh(a);
    for (std::size_t i = 0; i < w.size(); ++i) g[i] = (1.0 - t * t) * w[i] + 0.2 * x[i];
    double q = 0.0;
    for (double xi : x) q += xi * xi;
    return t + 0.1 * q;
  };
}

TEST(Attribution, LinearIdentity) {
  const std::vector<double> w{0.5, -2.0, 3.0, 0.25};
  const std::vector<double> x{1.0, 2.0, -1.5, 4.0};
  const std::vector<std::vector<double>> zero{std::vector<double>(4, 0.0)};
  ad::RngStream rng(1, 2);
  const auto attr = expected_gradients(linear_readout(w), x, zero, 16, rng);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(attr[i], w[i] * x[i], 1e-10);
}

TEST(Attribution, ZeroWhenInputIsBaseline) {
  const std::vector<double> x{1.0, 2.0, -1.5};
  const std::vector<std::vector<double>> base{x};
  ad::RngStream rng(1, 2);
  for (double a : expected_gradients(smooth_readout({1.0, -1.0, 0.5}), x, base, 8, rng)) EXPECT_EQ(a, 0.0);
}

TEST(Attribution, CompletenessOnSmoothReadout) {
  const std::vector<double> w{0.7, -0.4, 0.9, 0.3, -0.8};
  const auto f = smooth_readout(w);
  const std::vector<double> x{1.0, 0.5, -0.7, 1.2, 0.3};
  ad::RngStream brng(4, 5);
  std::vector<std::vector<double>> base(8, std::vector<double>(5));
  for (auto& b : base) b = brng.normals(5);
  ad::RngStream rng(1, 2);
  const auto attr = expected_gradients(f, x, base, 64, rng);
  std::vector<double> g(5);
  double fb = 0.0;
  for (const auto& b : base) fb += f(b, g);
  fb /= static_cast<double>(base.size());
  const double gap = f(x, g) - fb;
  const double total = std::accumulate(attr.begin(), attr.end(), 0.0);
  EXPECT_LE(std::abs(total - gap), 0.05 * std::abs(gap));
}

TEST(Attribution, PermutationEquivariant) {
  const std::vector<double> w{0.7, -0.4, 0.9};
  const std::vector<std::size_t> perm{2, 0, 1};
  const std::vector<double> x{1.0, 0.5, -0.7};
  const std::vector<std::vector<double>> base{{0.1, 0.2, 0.3}, {-0.5, 0.0, 0.4}};
  auto permute = [&](const std::vector<double>& v) {
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[perm[i]] = v[i];
    return out;
  };
  std::vector<std::vector<double>> pbase;
  for (const auto& b : base) pbase.push_back(permute(b));
  ad::RngStream r1(1, 2), r2(1, 2);
  const auto a = expected_gradients(smooth_readout(w), x, base, 8, r1);
  const auto b = expected_gradients(smooth_readout(permute(w)), permute(x), pbase, 8, r2);
  const auto pa = permute(a);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(b[i], pa[i], 1e-12);
}

TEST(Attribution, EncoderReadoutGradientMatchesFiniteDifference) {
  const RunConfig cfg = tiny_config();
  const auto data = prepare_data(cfg);
  const Model model = init_model(cfg);
  const auto& s = data.test.samples[0];
  const auto f = encoder_readout(model.encoder, s.y_img);
  std::vector<double> g(s.x.size()), scratch(s.x.size());
  f(s.x, g);
  // Small steps keep Top-K sets fixed.
  const double h = 1e-6;
  for (std::size_t i = 0; i < 4; ++i) {
    auto xp = s.x, xm = s.x;
    xp[i] += h;
    xm[i] -= h;
    EXPECT_NEAR((f(xp, scratch) - f(xm, scratch)) / (2 * h), g[i], 1e-5);
  }
}

TEST(Routing, UtilizationAndPreferenceSumToOne) {
  const RunConfig cfg = tiny_config();
  const auto data = prepare_data(cfg);
  Model model = init_model(cfg);
  model.generator.emplace(cfg.generator, ad::derive_stream(cfg.seed, 2));
  const auto tables = expert_tables(model.encoder, data.test.head(4));
  diffusion::SampleTrace trace;
  const auto stats = routing_stats(*model.generator, tables, cfg.sample.gen, &trace);
  for (const auto& level : stats.utilization)
    EXPECT_NEAR(std::accumulate(level.begin(), level.end(), 0.0), 1.0, 1e-12);
  ASSERT_EQ(stats.time_preference.rows(), cfg.generator.schedule.steps);
  for (std::size_t t = 0; t < stats.time_preference.rows(); ++t) {
    double s = 0.0;
    for (double p : stats.time_preference.row_span(t)) s += p;
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  EXPECT_EQ(stats.expected_level.size(), cfg.generator.schedule.steps);
  const std::vector<std::uint64_t> ids{10, 11, 12, 13};
  const auto csv = routing_trace_csv(trace, ids, cfg.generator.denoiser.tokens);
  EXPECT_EQ(csv.rfind("item,t,kind,row,col,value\n", 0), 0u);
  EXPECT_NE(csv.find("\n13,"), std::string::npos);
}

TEST(Partition, ChanceMatchesClosedForm) {
  RunConfig cfg;
  cfg.data.train = 8;
  cfg.data.test = 16;
  const auto data = prepare_data(cfg);
  const Model model = init_model(cfg);
  const auto score = partition_recovery(model.encoder, data, 100, 3);
  // 1 − 2p(1 − p) with p = 448 / 8128 within-group pairs.
  const double p = 448.0 / 8128.0;
  EXPECT_NEAR(score.chance_mean, 1.0 - 2.0 * p * (1.0 - p), 0.002);
  EXPECT_GT(score.chance_sd, 0.0);
  EXPECT_GE(score.rand_index, 0.0);
  EXPECT_LE(score.rand_index, 1.0);
}

// Alignment

TEST(Align, MatchesPlantedGroupsAcrossSubjects) {
  RunConfig cfg;
  cfg.data.train = 256;
  cfg.data.test = 8;
  const auto src = prepare_data(cfg, 0);
  const auto dst = prepare_data(cfg, 7);
  const auto match = match_voxels(src.train, dst.train);
  auto sorted = match;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::size_t> all(match.size());
  std::iota(all.begin(), all.end(), 0);
  EXPECT_EQ(sorted, all);
  const auto g0 = src.subject.observed_groups(src.world);
  const auto g7 = dst.subject.observed_groups(dst.world);
  for (std::size_t j = 0; j < match.size(); ++j) EXPECT_EQ(g0[match[j]], g7[j]) << "voxel " << j;
}

TEST(Align, CopiesEmbeddingRowsOnly) {
  const RunConfig cfg = tiny_config();
  Model model = init_model(cfg);
  const auto before = model.encoder.params();
  std::vector<std::size_t> match(16);
  std::iota(match.rbegin(), match.rend(), 0);
  align_voxel_embedding(model.encoder, match);
  const auto id = model.encoder.voxel_embedding_id();
  const auto& u = model.encoder.params().value(id);
  for (std::size_t j = 0; j < 16; ++j)
    for (std::size_t k = 0; k < u.cols(); ++k) EXPECT_EQ(u(j, k), before.value(id)(15 - j, k));
  for (auto e : model.encoder.expert_param_ids()) EXPECT_EQ(model.encoder.params().value(e), before.value(e));
  EXPECT_THROW(align_voxel_embedding(model.encoder, std::vector<std::size_t>(3, 0)), ConfigError);
}

// Training

TEST(Train, Stage1IsDeterministic) {
  const RunConfig cfg = tiny_config();
  const auto data = prepare_data(cfg);
  const auto a = train_stage1(cfg, data);
  const auto b = train_stage1(cfg, data);
  EXPECT_EQ(a.report.to_csv(), b.report.to_csv());
  EXPECT_TRUE(to_checkpoint(a.model, cfg, "stage1", 1, a.report) ==
              to_checkpoint(b.model, cfg, "stage1", 1, b.report));
  EXPECT_EQ(a.report.series.at("loss").size(), cfg.stage1.steps);
}

TEST(Train, Stage2LeavesEncoderBitIdentical) {
  const RunConfig cfg = tiny_config();
  const auto data = prepare_data(cfg);
  const Model base = init_model(cfg);
  const auto result = train_stage2(cfg, base, data);
  EXPECT_TRUE(result.model.encoder.params() == base.encoder.params());
  ASSERT_TRUE(result.model.generator.has_value());
  EXPECT_TRUE(std::isfinite(result.report.at("denoise_final")));
  EXPECT_TRUE(std::isfinite(result.report.at("kl_final")));
}

TEST(Train, FinetuneTouchesOnlyRouters) {
  const RunConfig cfg = tiny_config();
  const auto src = prepare_data(cfg, 0);
  const auto data = prepare_data(cfg, 7);
  const Model base = init_model(cfg);
  const auto result = finetune_routers(cfg, base, data, 0.25, &src.train);
  for (auto e : base.encoder.expert_param_ids())
    EXPECT_EQ(result.model.encoder.params().value(e), base.encoder.params().value(e));
  EXPECT_EQ(result.report.at("subset_size"), 24.0);
  const double frac = result.report.at("trainable_fraction");
  EXPECT_GT(frac, 0.0);
  EXPECT_LT(frac, 1.0);
  EXPECT_EQ(result.report.at("trainable_params") / result.report.at("total_params"), frac);
}

TEST(Train, FinetuneRejectsBadInputs) {
  const RunConfig cfg = tiny_config();
  const auto src = prepare_data(cfg, 0);
  const auto data = prepare_data(cfg, 7);
  const Model base = init_model(cfg);
  EXPECT_THROW(finetune_routers(cfg, base, data, 0.0, &src.train), ConfigError);
  EXPECT_THROW(finetune_routers(cfg, base, data, 1.5, &src.train), ConfigError);
  EXPECT_THROW(finetune_routers(cfg, base, data, 0.5, nullptr), ConfigError);
  RunData empty = data;
  empty.train = data.train.head(0);
  EXPECT_THROW(finetune_routers(cfg, base, empty, 1.0, &src.train), ConfigError);
}

TEST(Train, NonFiniteLossRaisesDivergenceWithDiagnostic) {
  const RunConfig cfg = tiny_config();
  auto data = prepare_data(cfg);
  for (auto& s : data.train.samples) s.x[0] = NAN;
  try {
    train_stage1(cfg, data);
    FAIL() << "expected DivergenceError";
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.diagnostic().kind, "diagnostic");
    EXPECT_EQ(e.diagnostic().step, 1u);
  }
}

}  // namespace
}  // namespace mrb::harness
