#include "mrb/harness/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "mrb/error.hpp"

namespace mrb::harness {

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("cosine: length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

double mse(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) throw ShapeError("mse: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

std::vector<double> midranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return x[i] < x[j]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw ShapeError("spearman: need two equal-length series");
  const auto ra = midranks(a);
  const auto rb = midranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va == 0.0 || vb == 0.0) return 0.0;
  return cov / std::sqrt(va * vb);
}

double rand_index(std::span<const std::size_t> a, std::span<const std::size_t> b) {
  if (a.size() != b.size()) {
    throw ConfigError("rand_index: partitions cover " + std::to_string(a.size()) + " and " +
                      std::to_string(b.size()) + " voxels");
  }
  if (a.size() < 2) return 1.0;
  std::size_t agree = 0, total = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = i + 1; j < a.size(); ++j) {
      agree += (a[i] == a[j]) == (b[i] == b[j]) ? 1 : 0;
      ++total;
    }
  }
  return static_cast<double>(agree) / static_cast<double>(total);
}

std::vector<std::size_t> labels_from_sets(const std::vector<std::vector<std::size_t>>& sets,
                                          std::size_t n) {
  constexpr std::size_t kUnset = static_cast<std::size_t>(-1);
  std::vector<std::size_t> labels(n, kUnset);
  for (std::size_t s = 0; s < sets.size(); ++s) {
    for (std::size_t i : sets[s]) {
      if (i >= n) throw ConfigError("partition names voxel " + std::to_string(i) + " outside 0.." + std::to_string(n - 1));
      if (labels[i] != kUnset) throw ConfigError("partition assigns voxel " + std::to_string(i) + " twice");
      labels[i] = s;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] == kUnset) throw ConfigError("partition leaves voxel " + std::to_string(i) + " uncovered");
  }
  return labels;
}

std::vector<std::size_t> random_balanced_partition(std::size_t n, std::size_t groups,
                                                   ad::RngStream& rng) {
  if (groups == 0 || n % groups != 0) throw ConfigError("balanced partition needs groups | n");
  const auto perm = rng.permutation(n);
  std::vector<std::size_t> labels(n);
  const std::size_t size = n / groups;
  for (std::size_t i = 0; i < n; ++i) labels[perm[i]] = i / size;
  return labels;
}

void MetricsReport::log(const std::string& name, std::size_t step, double value) {
  series[name].emplace_back(step, value);
}

double MetricsReport::at(const std::string& name) const {
  auto it = summary.find(name);
  if (it == summary.end()) throw ConfigError("metric not reported: " + name);
  return it->second;
}

void MetricsReport::merge(const MetricsReport& other, const std::string& prefix) {
  for (const auto& [k, v] : other.series) {
    auto& dst = series[prefix + k];
    dst.insert(dst.end(), v.begin(), v.end());
  }
  for (const auto& [k, v] : other.summary) summary[prefix + k] = v;
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, res.ptr};
}

std::string MetricsReport::to_csv() const {
  std::ostringstream out;
  out << "kind,name,step,value\n";
  for (const auto& [name, points] : series)
    for (const auto& [step, value] : points)
      out << "series," << name << ',' << step << ',' << format_double(value) << '\n';
  for (const auto& [name, value] : summary)
    out << "summary," << name << ",," << format_double(value) << '\n';
  return out.str();
}

namespace {

nlohmann::json number(double v) {
  if (std::isfinite(v)) return v;
  return format_double(v);
}

double read_number(const nlohmann::json& j) {
  if (j.is_number()) return j.get<double>();
  const auto s = j.get<std::string>();
  if (s == "nan") return std::nan("");
  if (s == "inf") return INFINITY;
  if (s == "-inf") return -INFINITY;
  throw FormatError(FormatError::Kind::kCorrupt, "metrics: unreadable number '" + s + "'");
}

}  // namespace

std::string MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["series"] = nlohmann::ordered_json::object();
  for (const auto& [name, points] : series) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& [step, value] : points) arr.push_back({step, number(value)});
    j["series"][name] = std::move(arr);
  }
  j["summary"] = nlohmann::ordered_json::object();
  for (const auto& [name, value] : summary) j["summary"][name] = number(value);
  return j.dump(2) + "\n";
}

MetricsReport MetricsReport::from_json(const std::string& text) {
  MetricsReport r;
  try {
    const auto j = nlohmann::json::parse(text);
    for (const auto& [name, arr] : j.at("series").items())
      for (const auto& p : arr) r.log(name, p.at(0).get<std::size_t>(), read_number(p.at(1)));
    for (const auto& [name, v] : j.at("summary").items()) r.summary[name] = read_number(v);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatError::Kind::kCorrupt, std::string("metrics json: ") + e.what());
  }
  return r;
}

void MetricsReport::write(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  auto put = [](const std::filesystem::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw FormatError(FormatError::Kind::kIo, "cannot write " + p.string());
    f << text;
  };
  put(dir / "metrics.csv", to_csv());
  put(dir / "metrics.json", to_json());
}

}  // namespace mrb::harness
