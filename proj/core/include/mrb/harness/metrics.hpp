#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mrb/ad/rng.hpp"

namespace mrb::harness {

/// Cosine of the angle between a and b; 0 when either is the zero vector.
double cosine(std::span<const double> a, std::span<const double> b);
double mse(std::span<const double> a, std::span<const double> b);
/// Average ranks (1-based) with midranks for ties.
std::vector<double> midranks(std::span<const double> x);
/// Pearson correlation of midranks. Constant input gives 0.
double spearman(std::span<const double> a, std::span<const double> b);

/// Fraction of voxel pairs on which two labelings agree (both together or both apart).
double rand_index(std::span<const std::size_t> a, std::span<const std::size_t> b);
/// Labels from disjoint sets; throws ConfigError unless the sets cover 0..n-1 exactly once.
std::vector<std::size_t> labels_from_sets(const std::vector<std::vector<std::size_t>>& sets,
                                          std::size_t n);
/// Uniformly random labeling with `groups` equal-size groups.
std::vector<std::size_t> random_balanced_partition(std::size_t n, std::size_t groups,
                                                   ad::RngStream& rng);

/// Named scalar series (step → value) plus a final summary.
struct MetricsReport {
  std::map<std::string, std::vector<std::pair<std::size_t, double>>> series;
  std::map<std::string, double> summary;

  void log(const std::string& name, std::size_t step, double value);
  void set(const std::string& name, double value) { summary[name] = value; }
  double at(const std::string& name) const;
  void merge(const MetricsReport& other, const std::string& prefix = "");

  /// Long format: kind,name,step,value. Summary rows have an empty step.
  std::string to_csv() const;
  std::string to_json() const;
  static MetricsReport from_json(const std::string& text);
  /// Writes metrics.csv and metrics.json into `dir`.
  void write(const std::filesystem::path& dir) const;
};

/// Shortest decimal text that reads back to the identical double.
std::string format_double(double v);

}  // namespace mrb::harness
