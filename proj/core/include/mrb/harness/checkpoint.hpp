#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mrb/ad/parameters.hpp"

namespace mrb::harness {

// A checkpoint is a directory holding
//
//   checkpoint.json  manifest: kind, step, config, metrics, tensor directory
//   tensors.bin      "MRBT" | version u32 | count u64 | little-endian f64 values
//
// Each directory entry gives the tensor's group, name, shape and offset (in
// values) into the blob. The manifest also records an FNV-1a hash of the blob.
inline constexpr char kTensorMagic[4] = {'M', 'R', 'B', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string kind;  // stage1, stage2, finetune, diagnostic
  std::uint64_t step = 0;
  std::string config;  // RunConfig JSON
  std::map<std::string, double> metrics;
  /// Named parameter groups, e.g. "encoder", "time", "space", "denoiser".
  std::vector<std::pair<std::string, ad::ParameterSet>> groups;

  const ad::ParameterSet& group(const std::string& name) const;
  bool has_group(const std::string& name) const;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt);

/// Throws FormatError: kIo (missing files), kBadMagic, kVersionMismatch,
/// kTruncated (blob shorter than the directory needs) or kCorrupt (hash or
/// manifest mismatch).
Checkpoint load_checkpoint(const std::filesystem::path& dir);

std::uint64_t fnv1a(const std::vector<unsigned char>& bytes);

}  // namespace mrb::harness
