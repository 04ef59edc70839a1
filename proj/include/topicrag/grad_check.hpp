#pragma once

#include <functional>
#include <span>
#include <vector>

#include "topicrag/autodiff.hpp"

namespace topicrag {

// Scalar-valued composition of tape ops over the given inputs.
using ScalarFn = std::function<Var(Tape&, std::span<const Var>)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Compares the tape gradient of f against fourth-order central differences
// (steps of +-eps and +-2 eps) at every coordinate of every input. Relative error per coordinate is
// |a - n| / max(|a|, |n|, 1e-8). Throws NumericError on a non-finite
// evaluation.
GradCheckResult grad_check_detailed(const ScalarFn& f, const std::vector<Tensor>& inputs,
                                    double eps = 1e-3);

inline double grad_check(const ScalarFn& f, const std::vector<Tensor>& inputs, double eps = 1e-3) {
  return grad_check_detailed(f, inputs, eps).max_relative_error;
}

}  // namespace topicrag
