#include "mrb/ad/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace mrb::ad {

namespace {

double evaluate(const ScalarFn& f, const std::vector<Tensor>& inputs) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const Tensor& t : inputs) vars.push_back(tape.constant(t));
  return f(tape, vars).value().item();
}

}  // namespace

GradCheckReport grad_check_report(const ScalarFn& f, const std::vector<Tensor>& inputs,
                                  double step) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& t : inputs) vars.push_back(tape.variable(t));
    const Gradients grads = tape.backward(f(tape, vars));
    for (const Var& v : vars) analytic.push_back(grads.wrt(v));
  }

  GradCheckReport report;
  std::vector<Tensor> probe = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    double diff_max = 0.0;
    double numeric_max = 0.0;
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double original = probe[k][i];
      probe[k][i] = original + step;
      const double up = evaluate(f, probe);
      probe[k][i] = original - step;
      const double down = evaluate(f, probe);
      probe[k][i] = original;
      const double numeric = (up - down) / (2.0 * step);
      diff_max = std::max(diff_max, std::abs(analytic[k][i] - numeric));
      numeric_max = std::max(numeric_max, std::abs(numeric));
    }
    const double rel = diff_max / std::max(1e-8, numeric_max);
    report.per_input.push_back(rel);
    report.max_relative_error = std::max(report.max_relative_error, rel);
    report.max_absolute_error = std::max(report.max_absolute_error, diff_max);
  }
  return report;
}

}  // namespace mrb::ad
