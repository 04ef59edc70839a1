#include "topicrag/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "topicrag/error.hpp"

namespace topicrag {

namespace {

double evaluate(const ScalarFn& f, const std::vector<Tensor>& inputs) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const auto& in : inputs) vars.push_back(tape.constant(in));
  const Var out = f(tape, vars);
  if (out.value().size() != 1) throw DimensionError("grad_check: function is not scalar-valued");
  const double v = out.value()[0];
  if (!std::isfinite(v)) throw NumericError("grad_check: non-finite function value");
  return v;
}

}  // namespace

GradCheckResult grad_check_detailed(const ScalarFn& f, const std::vector<Tensor>& inputs, double eps) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& in : inputs) vars.push_back(tape.input(in));
    const Var out = f(tape, vars);
    if (out.value().size() != 1) throw DimensionError("grad_check: function is not scalar-valued");
    tape.backward(out);
    for (const auto& v : vars) analytic.push_back(v.grad());
  }

  GradCheckResult result;
  std::vector<Tensor> probe = inputs;
  for (std::size_t which = 0; which < inputs.size(); ++which) {
    for (std::size_t i = 0; i < inputs[which].size(); ++i) {
      const double x0 = inputs[which][i];
      auto at = [&](double offset) {
        probe[which][i] = x0 + offset;
        return evaluate(f, probe);
      };
      // Fourth-order central difference.
      const double numeric = (8.0 * (at(eps) - at(-eps)) - (at(2.0 * eps) - at(-2.0 * eps))) / (12.0 * eps);
      probe[which][i] = x0;
      const double a = analytic[which][i];
      if (!std::isfinite(a)) throw NumericError("grad_check: non-finite analytic gradient");
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double err = std::abs(a - numeric) / denom;
      if (err > result.max_relative_error || (which == 0 && i == 0)) {
        result = {err, which, i, a, numeric};
      }
    }
  }
  return result;
}

}  // namespace topicrag
