#include "mrb/harness/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mrb/ad/rng.hpp"
#include "mrb/error.hpp"
#include "mrb/synth/dataset_io.hpp"

namespace mrb::harness {

namespace {

constexpr std::uint64_t kRandomInputStream = 0x52414e44;

template <class Get>
ad::Tensor gather(const synth::Dataset& data, std::span<const std::size_t> items, std::size_t width,
                  Get get) {
  ad::Tensor out(items.size(), width);
  for (std::size_t b = 0; b < items.size(); ++b) {
    const auto& v = get(data.samples.at(items[b]));
    if (v.size() != width) throw ShapeError("dataset row has the wrong width");
    std::copy(v.begin(), v.end(), out.row_span(b).begin());
  }
  return out;
}

synth::Dataset load_checked(const std::string& path, const synth::WorldSpec& spec) {
  auto d = synth::load_dataset(path);
  if (d.voxels != spec.voxels || d.target != spec.target || d.latent != spec.latent) {
    throw ConfigError("dataset " + path + " does not match the configured world");
  }
  return d;
}

}  // namespace

RunData prepare_data(const RunConfig& cfg, std::uint64_t subject) {
  RunData out;
  out.world = synth::gen_world(cfg.world);
  out.subject = synth::gen_subject(out.world, subject);
  out.train = cfg.data.train_path.empty()
                  ? synth::gen_dataset(out.world, out.subject, cfg.data.train, cfg.data.train_seed)
                  : load_checked(cfg.data.train_path, cfg.world);
  out.test = cfg.data.test_path.empty()
                 ? synth::gen_dataset(out.world, out.subject, cfg.data.test, cfg.data.test_seed)
                 : load_checked(cfg.data.test_path, cfg.world);
  return out;
}

ad::Tensor voxel_column(const synth::Dataset& data, std::span<const std::size_t> items) {
  ad::Tensor out(items.size() * data.voxels, 1);
  for (std::size_t b = 0; b < items.size(); ++b) {
    const auto& x = data.samples.at(items[b]).x;
    std::copy(x.begin(), x.end(), out.data().begin() + static_cast<std::ptrdiff_t>(b * data.voxels));
  }
  return out;
}

ad::Tensor image_targets(const synth::Dataset& data, std::span<const std::size_t> items) {
  return gather(data, items, data.target, [](const synth::Sample& s) -> const auto& { return s.y_img; });
}

ad::Tensor text_targets(const synth::Dataset& data, std::span<const std::size_t> items) {
  return gather(data, items, data.target, [](const synth::Sample& s) -> const auto& { return s.y_text; });
}

std::vector<ad::Tensor> latents(const synth::World& world, const synth::Dataset& data,
                                std::span<const std::size_t> items) {
  std::vector<ad::Tensor> out;
  out.reserve(items.size());
  for (std::size_t i : items) out.push_back(synth::stimulus_latent(world, data.samples.at(i).s));
  return out;
}

Predictions predict(const moe::MoeEncoder& encoder, const synth::Dataset& data, std::size_t chunk) {
  const std::size_t dim = encoder.config().embed;
  Predictions out{ad::Tensor(data.size(), dim), ad::Tensor(data.size(), dim)};
  for (std::size_t begin = 0; begin < data.size(); begin += chunk) {
    const std::size_t end = std::min(data.size(), begin + chunk);
    std::vector<std::size_t> items(end - begin);
    std::iota(items.begin(), items.end(), begin);
    ad::Tape tape;
    const auto fwd = encoder.forward(tape, tape.constant(voxel_column(data, items)), items.size(),
                                     {.binding = ad::Binding::kFrozen});
    std::copy(fwd.pred_img.value().data().begin(), fwd.pred_img.value().data().end(),
              out.img.data().begin() + static_cast<std::ptrdiff_t>(begin * dim));
    std::copy(fwd.pred_text.value().data().begin(), fwd.pred_text.value().data().end(),
              out.text.data().begin() + static_cast<std::ptrdiff_t>(begin * dim));
  }
  return out;
}

std::vector<router::ExpertTable> expert_tables(const moe::MoeEncoder& encoder,
                                               const synth::Dataset& data, std::size_t chunk) {
  std::vector<router::ExpertTable> out;
  out.reserve(data.size());
  for (std::size_t begin = 0; begin < data.size(); begin += chunk) {
    const std::size_t end = std::min(data.size(), begin + chunk);
    std::vector<std::size_t> items(end - begin);
    std::iota(items.begin(), items.end(), begin);
    ad::Tape tape;
    const auto fwd = encoder.forward(tape, tape.constant(voxel_column(data, items)), items.size(),
                                     {.binding = ad::Binding::kFrozen});
    for (auto& t : router::expert_tables(fwd)) out.push_back(std::move(t));
  }
  return out;
}

synth::Dataset random_inputs(const synth::Dataset& like, std::uint64_t seed) {
  if (like.size() == 0) throw ConfigError("random_inputs: empty dataset");
  const std::size_t v = like.voxels;
  std::vector<double> mean(v, 0.0), sd(v, 0.0);
  for (const auto& s : like.samples)
    for (std::size_t i = 0; i < v; ++i) mean[i] += s.x[i];
  for (double& m : mean) m /= static_cast<double>(like.size());
  for (const auto& s : like.samples)
    for (std::size_t i = 0; i < v; ++i) sd[i] += (s.x[i] - mean[i]) * (s.x[i] - mean[i]);
  for (double& s : sd) s = std::sqrt(s / static_cast<double>(like.size()));

  synth::Dataset out = like;
  for (std::size_t n = 0; n < out.size(); ++n) {
    ad::RngStream rng(seed, ad::derive_stream(kRandomInputStream, n));
    for (std::size_t i = 0; i < v; ++i) out.samples[n].x[i] = mean[i] + sd[i] * rng.normal();
  }
  return out;
}

std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> out(n);
  std::iota(out.begin(), out.end(), 0);
  return out;
}

}  // namespace mrb::harness
