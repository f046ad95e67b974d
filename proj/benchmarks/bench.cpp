#include <benchmark/benchmark.h>

#include "mrb/ad/ops.hpp"
#include "mrb/ad/rng.hpp"
#include "mrb/diffusion/generator.hpp"
#include "mrb/harness/config.hpp"
#include "mrb/harness/data.hpp"
#include "mrb/harness/evaluate.hpp"
#include "mrb/moe/assign.hpp"
#include "mrb/moe/encoder.hpp"
#include "mrb/moe/losses.hpp"

namespace {

using namespace mrb;

const harness::RunData& default_data() {
  static const harness::RunData data = [] {
    harness::RunConfig cfg;
    cfg.data.train = 256;
    cfg.data.test = 64;
    return harness::prepare_data(cfg);
  }();
  return data;
}

void BM_AssignTopk(benchmark::State& state) {
  ad::RngStream rng(1, 0);
  ad::Tensor a(128, static_cast<std::size_t>(state.range(0)));
  for (double& v : a.data()) v = rng.normal();
  const ad::Tensor p = ad::kernels::softmax_rows(a);
  for (auto _ : state) benchmark::DoNotOptimize(moe::assign_topk(p, 1.0));
}
BENCHMARK(BM_AssignTopk)->Arg(2)->Arg(16);

void BM_EncoderForward(benchmark::State& state) {
  const moe::MoeEncoder enc(moe::HierarchyConfig{}, 2);
  const auto& data = default_data();
  const auto items = harness::iota(static_cast<std::size_t>(state.range(0)));
  const auto x = harness::voxel_column(data.train, items);
  for (auto _ : state) {
    ad::Tape tape;
    benchmark::DoNotOptimize(enc.forward(tape, tape.constant(x), items.size(), {.binding = ad::Binding::kFrozen}));
  }
}
BENCHMARK(BM_EncoderForward)->Arg(1)->Arg(32);

void BM_Stage1Step(benchmark::State& state) {
  const moe::MoeEncoder enc(moe::HierarchyConfig{}, 3);
  const auto& data = default_data();
  const auto items = harness::iota(32);
  const auto x = harness::voxel_column(data.train, items);
  const auto yi = harness::image_targets(data.train, items);
  const auto yt = harness::text_targets(data.train, items);
  for (auto _ : state) {
    ad::Tape tape;
    const auto fwd = enc.forward(tape, tape.constant(x), items.size());
    const auto loss = moe::stage1_loss(fwd, tape.constant(yi), tape.constant(yt));
    benchmark::DoNotOptimize(tape.backward(loss.total));
  }
}
BENCHMARK(BM_Stage1Step);

struct GenFixture {
  diffusion::Generator gen{diffusion::GeneratorConfig{}, 4};
  std::vector<router::ExpertTable> tables;
  GenFixture() {
    const moe::MoeEncoder enc(moe::HierarchyConfig{}, 5);
    tables = harness::expert_tables(enc, default_data().test.head(32));
  }
};

void BM_Stage2Step(benchmark::State& state) {
  static const GenFixture fx;
  const auto& data = default_data();
  std::vector<const router::ExpertTable*> ptrs;
  for (const auto& t : fx.tables) ptrs.push_back(&t);
  const auto z0 = harness::latents(data.world, data.test, harness::iota(ptrs.size()));
  ad::RngStream rng(6, 0);
  for (auto _ : state) {
    ad::Tape tape;
    const auto loss = diffusion::stage2_loss(tape, fx.gen, ptrs, z0, rng, 0.1);
    benchmark::DoNotOptimize(tape.backward(loss.total));
  }
}
BENCHMARK(BM_Stage2Step);

void BM_Sample(benchmark::State& state) {
  static const GenFixture fx;
  const std::size_t batch = static_cast<std::size_t>(state.range(0));
  std::vector<const router::ExpertTable*> ptrs;
  std::vector<std::uint64_t> ids;
  for (std::size_t i = 0; i < batch; ++i) {
    ptrs.push_back(&fx.tables[i]);
    ids.push_back(i);
  }
  const diffusion::GenConfig cfg{.steps = 30, .guidance = 2.0, .seed = 1};
  for (auto _ : state) benchmark::DoNotOptimize(diffusion::sample(fx.gen, ptrs, ids, cfg));
}
BENCHMARK(BM_Sample)->Arg(1)->Arg(16);

void BM_ExpectedGradients(benchmark::State& state) {
  const moe::MoeEncoder enc(moe::HierarchyConfig{}, 7);
  const auto& data = default_data();
  const auto& smp = data.test.samples[0];
  const auto readout = harness::encoder_readout(enc, smp.y_img);
  ad::RngStream rng(8, 0);
  const auto baselines = harness::draw_baselines(data.train, 4, rng);
  for (auto _ : state)
    benchmark::DoNotOptimize(harness::expected_gradients(readout, smp.x, baselines, 16, rng));
}
BENCHMARK(BM_ExpectedGradients);

}  // namespace

BENCHMARK_MAIN();
