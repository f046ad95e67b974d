#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "mrb/ad/tensor.hpp"

namespace mrb::ad {

using ParamId = std::size_t;

/// Named, ordered collection of trainable tensors.
///
/// Insertion order is the canonical order used by checkpoints and the optimizer.
class ParameterSet {
 public:
  ParamId add(std::string name, Tensor value);

  std::size_t size() const noexcept { return values_.size(); }
  const std::string& name(ParamId id) const { return names_.at(id); }
  const Tensor& value(ParamId id) const { return values_.at(id); }
  Tensor& value(ParamId id) { return values_.at(id); }

  bool contains(const std::string& name) const { return index_.contains(name); }
  ParamId id(const std::string& name) const;

  const std::vector<std::string>& names() const noexcept { return names_; }
  const std::vector<Tensor>& values() const noexcept { return values_; }

  /// Total scalar count across the given ids (all ids when empty).
  std::size_t scalar_count() const;
  std::size_t scalar_count(const std::vector<ParamId>& ids) const;

  friend bool operator==(const ParameterSet& a, const ParameterSet& b) {
    return a.names_ == b.names_ && a.values_ == b.values_;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::unordered_map<std::string, ParamId> index_;
};

}  // namespace mrb::ad
