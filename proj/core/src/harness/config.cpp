#include "mrb/harness/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mrb/error.hpp"

namespace mrb::harness {

namespace {

using Json = nlohmann::ordered_json;

// One field list per struct, walked by a writer and by a reader.
template <class V> void fields(V& v, synth::WorldSpec& s) {
  v("groups", s.groups);
  v("voxels", s.voxels);
  v("latent", s.latent);
  v("target", s.target);
  v("noise", s.noise);
  v("seed", s.seed);
  v("latent_tokens", s.latent_tokens);
  v("token_width", s.token_width);
}

template <class V> void fields(V& v, DataConfig& s) {
  v("subject", s.subject);
  v("train", s.train);
  v("test", s.test);
  v("train_seed", s.train_seed);
  v("test_seed", s.test_seed);
  v("train_path", s.train_path);
  v("test_path", s.test_path);
}

template <class V> void fields(V& v, moe::HierarchyConfig& s) {
  v("voxels", s.voxels);
  v("levels", s.levels);
  v("root_experts", s.root_experts);
  v("branching", s.branching);
  v("voxel_embed", s.voxel_embed);
  v("feature", s.feature);
  v("embed", s.embed);
  v("capacity", s.capacity);
  v("activation", s.activation);
}

template <class V> void fields(V& v, moe::Stage1Weights& s) {
  v("mse", s.mse);
  v("contrastive", s.contrastive);
  v("balance", s.balance);
  v("tau", s.tau);
  v("tau_target", s.tau_target);
}

template <class V> void fields(V& v, Stage1Config& s) {
  v("steps", s.steps);
  v("batch", s.batch);
  v("lr", s.lr);
  v("cosine_decay", s.cosine_decay);
  v("eval_every", s.eval_every);
  v.nested("weights", s.weights);
}

template <class V> void fields(V& v, router::TimeRouterConfig& s) {
  v("levels", s.levels);
  v("time_width", s.time_width);
  v("key_width", s.key_width);
  v("sigma", s.sigma);
  v("kl_weight", s.kl_weight);
  v("mode", s.mode);
}

template <class V> void fields(V& v, router::SpaceRouterConfig& s) {
  v("latent_width", s.latent_width);
  v("embed", s.embed);
  v("attn", s.attn);
  v("cond", s.cond);
}

template <class V> void fields(V& v, diffusion::DenoiserConfig& s) {
  v("tokens", s.tokens);
  v("width", s.width);
  v("cond", s.cond);
  v("hidden", s.hidden);
  v("mlp", s.mlp);
  v("time_width", s.time_width);
  v("blocks", s.blocks);
  v("steps", s.steps);
}

template <class V> void fields(V& v, diffusion::ScheduleConfig& s) {
  v("steps", s.steps);
  v("beta_min", s.beta_min);
  v("beta_max", s.beta_max);
}

template <class V> void fields(V& v, diffusion::GeneratorConfig& s) {
  v.nested("time", s.time);
  v.nested("space", s.space);
  v.nested("denoiser", s.denoiser);
  v.nested("schedule", s.schedule);
  v("cond_dropout", s.cond_dropout);
}

template <class V> void fields(V& v, Stage2Config& s) {
  v("steps", s.steps);
  v("batch", s.batch);
  v("lr", s.lr);
  v("cosine_decay", s.cosine_decay);
  v("log_every", s.log_every);
}

template <class V> void fields(V& v, FinetuneConfig& s) {
  v("subject", s.subject);
  v("fractions", s.fractions);
  v("align", s.align);
  v("steps", s.steps);
  v("batch", s.batch);
  v("lr", s.lr);
  v("cosine_decay", s.cosine_decay);
}

template <class V> void fields(V& v, diffusion::GenConfig& s) {
  v("steps", s.steps);
  v("guidance", s.guidance);
  v("seed", s.seed);
}

template <class V> void fields(V& v, SampleConfig& s) {
  v("items", s.items);
  v.nested("gen", s.gen);
  v("batch", s.batch);
}

template <class V> void fields(V& v, EvalConfig& s) {
  v("ranks", s.ranks);
  v("n_baselines", s.n_baselines);
  v("n_interp", s.n_interp);
  v("attribute_items", s.attribute_items);
  v("random_partitions", s.random_partitions);
  v("routing_items", s.routing_items);
}

template <class V> void fields(V& v, RunConfig& s) {
  v("seed", s.seed);
  v.nested("world", s.world);
  v.nested("data", s.data);
  v.nested("model", s.model);
  v.nested("stage1", s.stage1);
  v.nested("generator", s.generator);
  v.nested("stage2", s.stage2);
  v.nested("finetune", s.finetune);
  v.nested("sample", s.sample);
  v.nested("eval", s.eval);
}

Json encode(moe::Activation a) { return a == moe::Activation::kGelu ? "gelu" : "tanh"; }
Json encode(router::LevelMode m) { return router::to_string(m); }
template <class T> Json encode(const T& x) { return x; }

void decode(const Json& j, moe::Activation& a, const std::string& key) {
  const auto s = j.get<std::string>();
  if (s == "gelu") a = moe::Activation::kGelu;
  else if (s == "tanh") a = moe::Activation::kTanh;
  else throw ConfigError(key + ": unknown activation '" + s + "' (gelu|tanh)");
}
void decode(const Json& j, router::LevelMode& m, const std::string&) {
  m = router::parse_level_mode(j.get<std::string>());
}
template <class T> void decode(const Json& j, T& x, const std::string& key) {
  if constexpr (std::is_same_v<T, bool>) {
    if (!j.is_boolean()) throw ConfigError(key + " must be true or false");
  } else if constexpr (std::is_unsigned_v<T>) {
    if (!j.is_number_unsigned()) throw ConfigError(key + " must be a non-negative integer");
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!j.is_number()) throw ConfigError(key + " must be a number");
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!j.is_string()) throw ConfigError(key + " must be a string");
  }
  try {
    x = j.get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

struct Writer {
  Json& out;
  template <class T> void operator()(const char* name, T& x) { out[name] = encode(x); }
  template <class T> void nested(const char* name, T& x) {
    Json sub = Json::object();
    Writer w{sub};
    fields(w, x);
    out[name] = std::move(sub);
  }
};

struct Reader {
  const Json& in;
  std::string path;
  std::set<std::string> seen;

  template <class T> void operator()(const char* name, T& x) {
    seen.insert(name);
    if (auto it = in.find(name); it != in.end()) decode(*it, x, path + name);
  }
  template <class T> void nested(const char* name, T& x) {
    seen.insert(name);
    auto it = in.find(name);
    if (it == in.end()) return;
    if (!it->is_object()) throw ConfigError(path + name + " must be an object");
    read(*it, x, path + name + ".");
  }
  template <class T> static void read(const Json& j, T& x, const std::string& path) {
    Reader r{j, path, {}};
    fields(r, x);
    for (const auto& [key, value] : j.items()) {
      if (!r.seen.contains(key)) throw ConfigError("unknown config key " + path + key);
    }
  }
};

}  // namespace

void RunConfig::validate() const {
  world.validate();
  model.validate();
  generator.validate();
  if (model.voxels != world.voxels) throw ConfigError("model.voxels must equal world.voxels");
  if (model.embed != world.target) throw ConfigError("model.embed must equal world.target");
  if (generator.time.levels != model.levels) {
    throw ConfigError("generator.time.levels must equal model.levels");
  }
  if (generator.space.embed != model.embed) {
    throw ConfigError("generator.space.embed must equal model.embed");
  }
  if (generator.denoiser.tokens != world.latent_tokens ||
      generator.denoiser.width != world.token_width) {
    throw ConfigError("denoiser latent shape must equal the world's latent shape");
  }
  if (data.train == 0 || data.test == 0) throw ConfigError("data.train and data.test must be >= 1");
  if (stage1.batch == 0 || stage2.batch == 0 || finetune.batch == 0 || sample.batch == 0) {
    throw ConfigError("batch sizes must be >= 1");
  }
  if (!(stage1.lr > 0.0) || !(stage2.lr > 0.0) || !(finetune.lr > 0.0)) {
    throw ConfigError("learning rates must be positive");
  }
  for (double f : finetune.fractions) {
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError("finetune fractions must be in (0, 1]");
  }
  for (std::size_t r : eval.ranks) {
    if (r > model.embed) throw ConfigError("bottleneck rank exceeds the embedding width");
  }
  if (eval.n_interp == 0) throw ConfigError("eval.n_interp must be >= 1");
  sample.gen.validate(generator.schedule.steps);
}

std::string RunConfig::to_json() const {
  Json j = Json::object();
  Writer w{j};
  fields(w, const_cast<RunConfig&>(*this));
  return j.dump(2) + "\n";
}

RunConfig RunConfig::from_json(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig cfg;
  Reader::read(j, cfg, "");
  cfg.validate();
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot read config " + path.string());
  std::ostringstream s;
  s << f.rdbuf();
  return from_json(s.str());
}

}  // namespace mrb::harness
