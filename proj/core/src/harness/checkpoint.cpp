#include "mrb/harness/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "mrb/error.hpp"
#include "mrb/harness/metrics.hpp"

namespace mrb::harness {

namespace {

using Json = nlohmann::ordered_json;

void put_u64(std::vector<unsigned char>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

std::uint64_t get_u64(const unsigned char* p, int bytes = 8) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

std::vector<unsigned char> read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw FormatError(FormatError::Kind::kIo, "cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& p, const void* data, std::size_t n) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(FormatError::Kind::kIo, "cannot open " + p.string() + " for writing");
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!out) throw FormatError(FormatError::Kind::kIo, "write failed for " + p.string());
}

Json metric_value(double v) {
  if (std::isfinite(v)) return v;
  return format_double(v);
}

double read_metric(const Json& j) {
  if (j.is_number()) return j.get<double>();
  const auto s = j.get<std::string>();
  if (s == "nan") return std::nan("");
  if (s == "inf") return INFINITY;
  if (s == "-inf") return -INFINITY;
  throw FormatError(FormatError::Kind::kCorrupt, "checkpoint: unreadable metric '" + s + "'");
}

}  // namespace

std::uint64_t fnv1a(const std::vector<unsigned char>& bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 1099511628211ull;
  }
  return h;
}

const ad::ParameterSet& Checkpoint::group(const std::string& name) const {
  for (const auto& [n, set] : groups)
    if (n == name) return set;
  throw ConfigError("checkpoint has no parameter group '" + name + "'");
}

bool Checkpoint::has_group(const std::string& name) const {
  for (const auto& g : groups)
    if (g.first == name) return true;
  return false;
}

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt) {
  std::filesystem::create_directories(dir);
  std::vector<unsigned char> blob(kTensorMagic, kTensorMagic + 4);
  for (int i = 0; i < 4; ++i) blob.push_back(static_cast<unsigned char>(kCheckpointVersion >> (8 * i)));
  std::size_t count = 0;
  for (const auto& g : ckpt.groups)
    for (const auto& t : g.second.values()) count += t.size();
  put_u64(blob, count);

  Json tensors = Json::array();
  std::size_t offset = 0;
  for (const auto& [group, set] : ckpt.groups) {
    for (ad::ParamId id = 0; id < set.size(); ++id) {
      const auto& t = set.value(id);
      tensors.push_back({{"group", group}, {"name", set.name(id)}, {"shape", t.shape()},
                         {"offset", offset}});
      for (double v : t.data()) put_u64(blob, std::bit_cast<std::uint64_t>(v));
      offset += t.size();
    }
  }

  Json metrics = Json::object();
  for (const auto& [k, v] : ckpt.metrics) metrics[k] = metric_value(v);
  Json config = ckpt.config.empty() ? Json(nullptr) : Json::parse(ckpt.config);
  const Json manifest = {{"format", "MRBT"},
                         {"version", kCheckpointVersion},
                         {"kind", ckpt.kind},
                         {"step", ckpt.step},
                         {"config", config},
                         {"metrics", metrics},
                         {"blob", "tensors.bin"},
                         {"blob_bytes", blob.size()},
                         {"blob_fnv1a", fnv1a(blob)},
                         {"tensors", tensors}};
  write_file(dir / "tensors.bin", blob.data(), blob.size());
  const std::string text = manifest.dump(2) + "\n";
  write_file(dir / "checkpoint.json", text.data(), text.size());
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const auto manifest_bytes = read_file(dir / "checkpoint.json");
  Json m;
  try {
    m = Json::parse(manifest_bytes.begin(), manifest_bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatError::Kind::kCorrupt, "checkpoint manifest is not JSON: " + std::string(e.what()));
  }
  const auto blob = read_file(dir / "tensors.bin");
  if (blob.size() < 4 || std::memcmp(blob.data(), kTensorMagic, 4) != 0) {
    throw FormatError(FormatError::Kind::kBadMagic, "bad magic in " + (dir / "tensors.bin").string());
  }
  if (blob.size() < 16) throw FormatError(FormatError::Kind::kTruncated, "truncated tensor blob header");
  const auto blob_version = static_cast<std::uint32_t>(get_u64(blob.data() + 4, 4));

  Checkpoint ckpt;
  try {
    const auto version = m.at("version").get<std::uint32_t>();
    if (version != kCheckpointVersion || blob_version != kCheckpointVersion) {
      throw FormatError(FormatError::Kind::kVersionMismatch,
                        "checkpoint version " + std::to_string(version) + "/" +
                            std::to_string(blob_version) + ", reader expects " +
                            std::to_string(kCheckpointVersion));
    }
    const std::uint64_t count = get_u64(blob.data() + 8);
    if ((blob.size() - 16) / 8 < count || blob.size() != 16 + 8 * count ||
        blob.size() != m.at("blob_bytes").get<std::size_t>()) {
      throw FormatError(FormatError::Kind::kTruncated,
                        "tensor blob has " + std::to_string(blob.size()) + " bytes, manifest expects " +
                            std::to_string(m.at("blob_bytes").get<std::size_t>()));
    }
    if (fnv1a(blob) != m.at("blob_fnv1a").get<std::uint64_t>()) {
      throw FormatError(FormatError::Kind::kCorrupt, "tensor blob hash mismatch");
    }
    ckpt.kind = m.at("kind").get<std::string>();
    ckpt.step = m.at("step").get<std::uint64_t>();
    if (!m.at("config").is_null()) ckpt.config = m.at("config").dump(2) + "\n";
    for (const auto& [k, v] : m.at("metrics").items()) ckpt.metrics[k] = read_metric(v);
    for (const auto& e : m.at("tensors")) {
      const auto group = e.at("group").get<std::string>();
      const auto shape = e.at("shape").get<std::vector<std::size_t>>();
      const auto offset = e.at("offset").get<std::size_t>();
      std::size_t n = 1;
      for (auto s : shape) n *= s;
      if (offset > count || n > count - offset) {
        throw FormatError(FormatError::Kind::kCorrupt, "tensor " + e.at("name").get<std::string>() +
                                                           " lies outside the blob");
      }
      std::vector<double> data(n);
      for (std::size_t i = 0; i < n; ++i)
        data[i] = std::bit_cast<double>(get_u64(blob.data() + 16 + 8 * (offset + i)));
      if (ckpt.groups.empty() || ckpt.groups.back().first != group) ckpt.groups.emplace_back(group, ad::ParameterSet{});
      ckpt.groups.back().second.add(e.at("name").get<std::string>(), ad::Tensor(shape, std::move(data)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatError::Kind::kCorrupt, "malformed checkpoint manifest: " + std::string(e.what()));
  } catch (const ShapeError& e) {
    throw FormatError(FormatError::Kind::kCorrupt, "malformed checkpoint tensor: " + std::string(e.what()));
  }
  return ckpt;
}

}  // namespace mrb::harness
