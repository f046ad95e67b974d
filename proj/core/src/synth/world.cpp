#include "mrb/synth/world.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mrb/ad/rng.hpp"
#include "mrb/error.hpp"

namespace mrb::synth {

namespace {

constexpr std::uint64_t kWorldStream = 0x57'4F'52'4C'44ULL;    // "WORLD"
constexpr std::uint64_t kSubjectStream = 0x53'55'42'4AULL;      // "SUBJ"
constexpr std::uint64_t kSampleStream = 0x53'41'4D'50ULL;       // "SAMP"

void normalize(std::span<double> v) {
  double ss = 0.0;
  for (double x : v) ss += x * x;
  const double n = std::sqrt(ss);
  if (n > 0.0)
    for (double& x : v) x /= n;
}

std::vector<double> project(const ad::Tensor& map, std::span<const double> s) {
  std::vector<double> out(map.rows(), 0.0);
  for (std::size_t r = 0; r < map.rows(); ++r)
    for (std::size_t c = 0; c < map.cols(); ++c) out[r] += map(r, c) * s[c];
  return out;
}

}  // namespace

void WorldSpec::validate() const {
  if (groups == 0 || voxels == 0 || latent == 0 || target == 0) {
    throw ConfigError("world dimensions must be positive");
  }
  if (voxels % groups != 0) {
    throw ConfigError("groups (" + std::to_string(groups) + ") must divide voxels (" +
                      std::to_string(voxels) + ")");
  }
  if (!(noise >= 0.0) || !std::isfinite(noise)) throw ConfigError("noise must be >= 0");
  if (latent_tokens == 0 || token_width == 0) throw ConfigError("latent shape must be positive");
}

std::vector<std::size_t> Subject::observed_groups(const World& world) const {
  std::vector<std::size_t> out(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) out[perm[i]] = world.group_of[i];
  return out;
}

Dataset Dataset::head(std::size_t n) const { return slice(0, std::min(n, size())); }

Dataset Dataset::slice(std::size_t begin, std::size_t end) const {
  if (begin > end || end > size()) throw ConfigError("dataset slice out of range");
  Dataset d{voxels, target, latent, {}};
  d.samples.assign(samples.begin() + static_cast<std::ptrdiff_t>(begin),
                   samples.begin() + static_cast<std::ptrdiff_t>(end));
  return d;
}

World gen_world(WorldSpec spec, std::uint64_t seed) {
  spec.seed = seed;
  return gen_world(spec);
}

World gen_world(const WorldSpec& spec) {
  spec.validate();
  ad::RngStream rng(spec.seed, kWorldStream);
  World w;
  w.spec = spec;

  const std::size_t per_group = spec.voxels / spec.groups;
  w.group_of.resize(spec.voxels);
  for (std::size_t i = 0; i < spec.voxels; ++i) w.group_of[i] = i / per_group;

  w.loadings = ad::Tensor(spec.groups, spec.latent);
  for (std::size_t g = 0; g < spec.groups; ++g) {
    for (double& x : w.loadings.row_span(g)) x = rng.normal();
    normalize(w.loadings.row_span(g));
  }

  w.voxel_weights.resize(spec.voxels);
  for (double& x : w.voxel_weights) x = rng.normal(1.0, 0.1);

  w.img_map = ad::Tensor(spec.target, spec.latent);
  for (double& x : w.img_map.data()) x = rng.normal();
  w.text_map = ad::Tensor(spec.target, spec.latent);
  for (double& x : w.text_map.data()) x = rng.normal();

  const double latent_scale = 1.0 / std::sqrt(static_cast<double>(spec.latent));
  w.latent_map = ad::Tensor(spec.latent_tokens * spec.token_width, spec.latent);
  for (double& x : w.latent_map.data()) x = rng.normal(0.0, latent_scale);
  return w;
}

Subject gen_subject(const World& world, std::uint64_t subject_seed) {
  const std::size_t v = world.spec.voxels;
  Subject sub;
  sub.id = subject_seed;
  if (subject_seed == 0) {
    sub.perm.resize(v);
    for (std::size_t i = 0; i < v; ++i) sub.perm[i] = i;
    sub.gains.assign(v, 1.0);
    return sub;
  }
  ad::RngStream rng(world.spec.seed, ad::derive_stream(kSubjectStream, subject_seed));
  sub.perm = rng.permutation(v);
  sub.gains.resize(v);
  for (double& g : sub.gains) g = rng.uniform(0.8, 1.2);
  return sub;
}

Dataset gen_dataset(const World& world, const Subject& subject, std::size_t n,
                    std::uint64_t seed) {
  if (n == 0) throw ConfigError("dataset size must be >= 1");
  const WorldSpec& spec = world.spec;
  if (subject.perm.size() != spec.voxels || subject.gains.size() != spec.voxels) {
    throw ConfigError("subject does not match world voxel count");
  }
  Dataset d{spec.voxels, spec.target, spec.latent, {}};
  d.samples.resize(n);
  std::vector<double> response(spec.voxels);
  for (std::size_t i = 0; i < n; ++i) {
    ad::RngStream rng(seed, ad::derive_stream(kSampleStream, i));
    Sample& smp = d.samples[i];
    smp.s = rng.normals(spec.latent);

    std::vector<double> group_signal(spec.groups, 0.0);
    for (std::size_t g = 0; g < spec.groups; ++g)
      for (std::size_t k = 0; k < spec.latent; ++k)
        group_signal[g] += world.loadings(g, k) * smp.s[k];

    for (std::size_t v = 0; v < spec.voxels; ++v) {
      response[v] =
          group_signal[world.group_of[v]] * world.voxel_weights[v] + spec.noise * rng.normal();
    }
    smp.x.resize(spec.voxels);
    for (std::size_t v = 0; v < spec.voxels; ++v) {
      const std::size_t pos = subject.perm[v];
      smp.x[pos] = subject.gains[pos] * response[v];
    }

    smp.y_img = project(world.img_map, smp.s);
    normalize(smp.y_img);
    smp.y_text = project(world.text_map, smp.s);
    normalize(smp.y_text);
  }
  return d;
}

ad::Tensor stimulus_latent(const World& world, std::span<const double> s) {
  if (s.size() != world.spec.latent) throw ShapeError("stimulus latent width mismatch");
  const auto flat = project(world.latent_map, s);
  return ad::Tensor({world.spec.latent_tokens, world.spec.token_width}, flat);
}

}  // namespace mrb::synth
