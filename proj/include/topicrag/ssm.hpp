#pragma once

#include <span>
#include <vector>

#include "topicrag/autodiff.hpp"
#include "topicrag/tensor.hpp"

namespace topicrag {

// Below this |delta * a| the zero-order-hold input factor (e^z - 1)/z is
// replaced by its limit 1.
inline constexpr double kSsmSeriesSwitch = 1e-8;

// Zero-order-hold discretization of a diagonal continuous system.
struct DiscreteSsm {
  std::vector<double> a_bar;  // exp(delta_i * a_i), one per state
  Tensor b_bar;               // [d_state x d_in]
};

// a_diag holds the diagonal of A; b is [d_state x d_in]; delta has one
// positive timescale per state. b_bar row i = ((e^{z_i}-1)/z_i) * delta_i * b row i
// with z_i = delta_i * a_i. Throws ValidationError when any delta <= 0.
DiscreteSsm ssm_discretize(std::span<const double> a_diag, const Tensor& b, std::span<const double> delta);
DiscreteSsm ssm_discretize(std::span<const double> a_diag, const Tensor& b, double delta);

// Runs h(t) = a_bar * h(t-1) + b_bar x(t), y(t) = C h(t) + D x(t) from
// h(0) = 0 and stacks y(1..T). x is [T x d_in], C [d_out x d_state],
// D [d_out x d_in]; the result is [T x d_out].
Tensor ssm_scan(const Tensor& x, const DiscreteSsm& sys, const Tensor& c, const Tensor& d);

// Differentiable fusion of discretization and scan. a_diag and delta are
// [d_state] (or [1 x d_state]); gradients flow to every argument.
Var selective_scan(const Var& x, const Var& a_diag, const Var& delta, const Var& b, const Var& c, const Var& d);

}  // namespace topicrag
