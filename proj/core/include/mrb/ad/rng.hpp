#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

namespace mrb::ad {

/// xoshiro256** generator seeded through splitmix64 from (seed, stream).
///
/// The sequence depends only on (seed, stream), so it is identical on every
/// platform. Independent sub-streams are obtained with `derive_stream`.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream);

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }

  std::uint64_t next_u64() noexcept;
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box–Muller; the second variate of each pair is cached.
  double normal() noexcept;
  double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }
  /// Unbiased integer in [0, n).
  std::size_t below(std::size_t n);

  std::vector<double> uniforms(std::size_t n);
  std::vector<double> normals(std::size_t n);
  /// Fisher–Yates shuffle of 0..n-1.
  std::vector<std::size_t> permutation(std::size_t n);

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t s_[4];
  std::optional<double> spare_;
};

std::uint64_t splitmix64(std::uint64_t& state) noexcept;

/// Deterministic id for sub-stream `index` of `base`.
std::uint64_t derive_stream(std::uint64_t base, std::uint64_t index) noexcept;

}  // namespace mrb::ad
