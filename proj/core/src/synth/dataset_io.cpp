#include "mrb/synth/dataset_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

#include "json.hpp"
#include "mrb/error.hpp"

namespace mrb::synth {

namespace {

using nlohmann::json;

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

void put_u64(std::vector<unsigned char>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

std::uint32_t get_u32(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

void put_f32(std::vector<unsigned char>& out, double v) {
  put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

void put_all(std::vector<unsigned char>& out, const std::vector<double>& values,
             std::size_t expected, const char* field) {
  if (values.size() != expected) {
    throw ShapeError(std::string("dataset field ") + field + " has " +
                     std::to_string(values.size()) + " values, expected " +
                     std::to_string(expected));
  }
  for (double v : values) put_f32(out, v);
}

std::vector<double> get_all(const unsigned char*& p, std::size_t n) {
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i, p += 4)
    out[i] = static_cast<double>(std::bit_cast<float>(get_u32(p)));
  return out;
}

}  // namespace

std::size_t dataset_file_size(std::size_t n, std::size_t v, std::size_t target,
                              std::size_t latent) {
  return kDatasetHeaderBytes + n * (v + 2 * target + latent) * 4;
}

void save_dataset(const std::filesystem::path& path, const Dataset& data) {
  std::vector<unsigned char> buf;
  buf.reserve(dataset_file_size(data.size(), data.voxels, data.target, data.latent));
  buf.insert(buf.end(), std::begin(kDatasetMagic), std::end(kDatasetMagic));
  put_u32(buf, kDatasetVersion);
  put_u64(buf, data.size());
  put_u32(buf, static_cast<std::uint32_t>(data.voxels));
  put_u32(buf, static_cast<std::uint32_t>(data.target));
  put_u32(buf, static_cast<std::uint32_t>(data.latent));
  buf.insert(buf.end(), 12, 0);
  for (const Sample& s : data.samples) {
    put_all(buf, s.x, data.voxels, "x");
    put_all(buf, s.y_img, data.target, "y_img");
    put_all(buf, s.y_text, data.target, "y_text");
    put_all(buf, s.s, data.latent, "s");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(FormatError::Kind::kIo, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw FormatError(FormatError::Kind::kIo, "write failed for " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatError::Kind::kIo, "cannot open " + path.string());
  const std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                       std::istreambuf_iterator<char>());
  if (buf.size() < 4 || std::memcmp(buf.data(), kDatasetMagic, 4) != 0) {
    throw FormatError(FormatError::Kind::kBadMagic, "bad magic in " + path.string());
  }
  if (buf.size() < kDatasetHeaderBytes) {
    throw FormatError(FormatError::Kind::kTruncated, "truncated header in " + path.string());
  }
  const std::uint32_t version = get_u32(buf.data() + 4);
  if (version != kDatasetVersion) {
    throw FormatError(FormatError::Kind::kVersionMismatch,
                      "version mismatch in " + path.string() + ": file has " +
                          std::to_string(version) + ", reader expects " +
                          std::to_string(kDatasetVersion));
  }
  Dataset d;
  const std::uint64_t n = get_u64(buf.data() + 8);
  d.voxels = get_u32(buf.data() + 16);
  d.target = get_u32(buf.data() + 20);
  d.latent = get_u32(buf.data() + 24);
  const std::size_t record = (d.voxels + 2 * d.target + d.latent) * 4;
  if (record == 0 || (buf.size() - kDatasetHeaderBytes) / record < n ||
      buf.size() != kDatasetHeaderBytes + n * record) {
    throw FormatError(FormatError::Kind::kTruncated,
                      "truncated dataset " + path.string() + ": " + std::to_string(buf.size()) +
                          " bytes for " + std::to_string(n) + " records");
  }
  d.samples.resize(n);
  const unsigned char* p = buf.data() + kDatasetHeaderBytes;
  for (Sample& s : d.samples) {
    s.x = get_all(p, d.voxels);
    s.y_img = get_all(p, d.target);
    s.y_text = get_all(p, d.target);
    s.s = get_all(p, d.latent);
  }
  return d;
}

void save_manifest(const std::filesystem::path& dataset_path, const DatasetManifest& m) {
  json j = {
      {"format", "MRBD"},
      {"version", kDatasetVersion},
      {"role", m.role},
      {"samples", m.samples},
      {"subject_id", m.subject_id},
      {"data_seed", m.data_seed},
      {"world",
       {{"groups", m.world.groups},
        {"voxels", m.world.voxels},
        {"latent", m.world.latent},
        {"target", m.world.target},
        {"noise", m.world.noise},
        {"seed", m.world.seed},
        {"latent_tokens", m.world.latent_tokens},
        {"token_width", m.world.token_width}}},
  };
  std::ofstream out(dataset_path.string() + ".json", std::ios::trunc);
  if (!out) throw FormatError(FormatError::Kind::kIo, "cannot write manifest for " + dataset_path.string());
  out << j.dump(2) << "\n";
}

DatasetManifest load_manifest(const std::filesystem::path& dataset_path) {
  std::ifstream in(dataset_path.string() + ".json");
  if (!in) throw FormatError(FormatError::Kind::kIo, "missing manifest for " + dataset_path.string());
  json j;
  try {
    in >> j;
    DatasetManifest m;
    m.role = j.at("role").get<std::string>();
    m.samples = j.at("samples").get<std::size_t>();
    m.subject_id = j.at("subject_id").get<std::uint64_t>();
    m.data_seed = j.at("data_seed").get<std::uint64_t>();
    const json& w = j.at("world");
    m.world.groups = w.at("groups").get<std::size_t>();
    m.world.voxels = w.at("voxels").get<std::size_t>();
    m.world.latent = w.at("latent").get<std::size_t>();
    m.world.target = w.at("target").get<std::size_t>();
    m.world.noise = w.at("noise").get<double>();
    m.world.seed = w.at("seed").get<std::uint64_t>();
    m.world.latent_tokens = w.at("latent_tokens").get<std::size_t>();
    m.world.token_width = w.at("token_width").get<std::size_t>();
    return m;
  } catch (const json::exception& e) {
    throw FormatError(FormatError::Kind::kCorrupt,
                      "malformed manifest for " + dataset_path.string() + ": " + e.what());
  }
}

}  // namespace mrb::synth
