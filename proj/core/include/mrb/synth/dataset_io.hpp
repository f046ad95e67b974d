#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

#include "mrb/synth/world.hpp"

namespace mrb::synth {

// Binary dataset layout (all little-endian):
//
//   "MRBD" | version u32 | n u64 | v u32 | D u32 | d u32 | 12 reserved bytes
//   n records of f32: x[v] y_img[D] y_text[D] s[d]
inline constexpr char kDatasetMagic[4] = {'M', 'R', 'B', 'D'};
inline constexpr std::uint32_t kDatasetVersion = 1;
inline constexpr std::size_t kDatasetHeaderBytes = 40;

std::size_t dataset_file_size(std::size_t n, std::size_t v, std::size_t target,
                              std::size_t latent);

/// Writes the binary file. Values are rounded to 32-bit floats.
void save_dataset(const std::filesystem::path& path, const Dataset& data);

/// Throws FormatError with kind kBadMagic, kVersionMismatch, kTruncated or kIo.
Dataset load_dataset(const std::filesystem::path& path);

/// Descriptive sibling manifest written next to a dataset (`<path>.json`).
struct DatasetManifest {
  WorldSpec world;
  std::uint64_t subject_id = 0;
  std::uint64_t data_seed = 0;
  std::size_t samples = 0;
  std::string role;  // e.g. "train", "test", "generated"
};

void save_manifest(const std::filesystem::path& dataset_path, const DatasetManifest& manifest);
DatasetManifest load_manifest(const std::filesystem::path& dataset_path);

}  // namespace mrb::synth
