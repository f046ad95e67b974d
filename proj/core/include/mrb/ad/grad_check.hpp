#pragma once

#include <functional>
#include <span>
#include <vector>

#include "mrb/ad/tape.hpp"
#include "mrb/ad/tensor.hpp"

namespace mrb::ad {

/// Scalar function of a list of tensors, expressed on a tape.
using ScalarFn = std::function<Var(Tape&, std::span<const Var>)>;

struct GradCheckReport {
  /// Largest error across inputs.
  double max_relative_error = 0.0;
  /// Largest raw |analytic − numeric| across all entries.
  double max_absolute_error = 0.0;
  /// One entry per input tensor: ‖analytic − numeric‖∞ / max(1e-8, ‖numeric‖∞).
  std::vector<double> per_input;
};

/// Compares reverse-mode gradients of `f` against central differences.
/// Never throws on a mismatch; a large error is simply reported.
GradCheckReport grad_check_report(const ScalarFn& f, const std::vector<Tensor>& inputs,
                                  double step = 1e-6);

inline double grad_check(const ScalarFn& f, const std::vector<Tensor>& inputs,
                         double step = 1e-6) {
  return grad_check_report(f, inputs, step).max_relative_error;
}

}  // namespace mrb::ad
