#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "topicrag/tensor.hpp"

namespace topicrag {

// A trainable tensor living outside any tape. Gradients from every tape that
// references it accumulate into `grad` until zero_grad().
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}
  void zero_grad();
};

class Tape;

// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  // Gradient after Tape::backward. Zeros for nodes that do not require grad.
  const Tensor& grad() const;
  bool requires_grad() const;
  const std::vector<std::size_t>& shape() const { return value().shape(); }

  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Reverse-mode gradient tape. Each op records its output value and a closure
// that pushes the output gradient into its parents. Single-threaded.
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  // Differentiable leaf whose gradient is read back through Var::grad().
  Var input(Tensor value);
  // Differentiable leaf bound to a Parameter; backward() adds into p.grad.
  Var parameter(Parameter& p);

  // Records a computed node. `backward` may be empty when no parent needs grad.
  Var record(Tensor value, const std::vector<Var>& parents, Backward backward);

  // Seeds d(root)/d(root) = 1 and sweeps the tape in reverse. root must hold a
  // single element.
  void backward(const Var& root);

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  const Tensor& grad(std::size_t id);
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  // Gradient buffer of a parent, or nullptr when the parent needs no gradient.
  Tensor* grad_buffer(std::size_t id);

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    Backward backward;
  };

  // deque keeps references to earlier nodes stable while new ones are pushed.
  std::deque<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Differentiable primitives. All shapes are checked; mismatches throw
// DimensionError naming both shapes.

// x[n x a] * W[a x b]
Var matmul(const Var& x, const Var& w);
// x[n x a] * W[a x b] + b[b], bias broadcast over rows.
Var affine(const Var& x, const Var& w, const Var& b);
Var add(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& x, double factor);
Var sum(const Var& x);

// Cross-correlation along the token axis. x[n x c_in], kernel[k x c_in x c_out].
// Zero padding of pad_left/pad_right rows is applied before sliding; the output
// has floor((n + pad_left + pad_right - k) / stride) + 1 rows.
Var conv1d(const Var& x, const Var& kernel, std::size_t stride, std::size_t pad_left,
           std::size_t pad_right);
// Stride-1 convolution whose output length equals the input length.
Var conv1d_same(const Var& x, const Var& kernel);

inline constexpr double kDefaultLeakySlope = 0.01;
// Slope applies for x < 0; the subgradient at exactly 0 is also `slope`.
Var leaky_relu(const Var& x, double slope = kDefaultLeakySlope);
Var sigmoid(const Var& x);
// Row-wise softmax of a matrix (a rank-1 tensor is one row).
Var softmax_rows(const Var& x);
// Columnwise max over rows: [n x d] -> [1 x d]. Gradient goes to the first
// row attaining the max.
Var global_max_pool(const Var& x);
Var gather_rows(const Var& x, std::vector<std::size_t> rows);
Var concat_rows(const Var& top, const Var& bottom);
// -exp(x), elementwise.
Var neg_exp(const Var& x);
// log(1 + exp(x)), elementwise.
Var softplus(const Var& x);

// -log softmax(logits)[target] for a single row of logits.
Var cross_entropy_logits(const Var& logits, std::size_t target);

inline constexpr double kProbClamp = 1e-7;
// -[y log p + (1-y) log(1-p)] with p clamped to [1e-7, 1-1e-7]. The gradient
// is zero where the clamp is active.
Var binary_cross_entropy(const Var& prob, double label);

// Tape-free conveniences for callers that only need values.
Tensor matmul_affine(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor conv1d(const Tensor& x, const Tensor& kernel, std::size_t stride, std::size_t pad_left,
              std::size_t pad_right);
Tensor leaky_relu(const Tensor& x, double slope = kDefaultLeakySlope);
Tensor sigmoid(const Tensor& x);
Tensor softmax_rows(const Tensor& x);
Tensor global_max_pool(const Tensor& x);

}  // namespace topicrag
