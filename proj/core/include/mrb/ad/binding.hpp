#pragma once

#include <vector>

#include "mrb/ad/parameters.hpp"
#include "mrb/ad/tape.hpp"

namespace mrb::ad {

/// How a module places its parameters on a tape.
enum class Binding {
  kTrainable,  // gradients flow to every parameter
  kFrozen,     // parameters enter as constants
};

struct Bindings {
  Binding mode = Binding::kTrainable;
  /// When set, these nodes (indexed by ParamId) stand in for the stored values.
  const std::vector<Var>* bound = nullptr;

  Var operator()(Tape& tape, const ParameterSet& set, ParamId id) const {
    if (bound) return bound->at(id);
    if (mode == Binding::kFrozen) return tape.constant(set.value(id));
    return tape.param(set, id);
  }
};

}  // namespace mrb::ad
