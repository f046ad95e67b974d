#include "mrb/ad/parameters.hpp"

#include "mrb/error.hpp"

namespace mrb::ad {

ParamId ParameterSet::add(std::string name, Tensor value) {
  if (index_.contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  const ParamId id = values_.size();
  index_.emplace(name, id);
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
  return id;
}

ParamId ParameterSet::id(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

std::size_t ParameterSet::scalar_count(const std::vector<ParamId>& ids) const {
  std::size_t n = 0;
  for (ParamId id : ids) n += values_.at(id).size();
  return n;
}

}  // namespace mrb::ad
