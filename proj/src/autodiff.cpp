#include "topicrag/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "topicrag/error.hpp"

namespace topicrag {

void Parameter::zero_grad() {
  if (!grad.same_shape(value)) grad = Tensor(value.shape());
  std::fill(grad.values().begin(), grad.values().end(), 0.0);
}

const Tensor& Var::value() const { return tape_->value(id_); }
const Tensor& Var::grad() const { return tape_->grad(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), Tensor{}, false, nullptr, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::input(Tensor value) {
  nodes_.push_back(Node{std::move(value), Tensor{}, true, nullptr, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Parameter& p) {
  nodes_.push_back(Node{p.value, Tensor{}, true, &p, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, const std::vector<Var>& parents, Backward backward) {
  bool needs = false;
  for (const auto& p : parents) {
    if (&p.tape() != this) throw Error("tape op mixes variables from different tapes");
    needs = needs || p.requires_grad();
  }
  if (!value.all_finite()) throw NumericError("non-finite value produced on tape");
  nodes_.push_back(Node{std::move(value), Tensor{}, needs, nullptr, needs ? std::move(backward) : Backward{}});
  return Var(this, nodes_.size() - 1);
}

Tensor* Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_.at(id);
  if (!n.requires_grad) return nullptr;
  if (n.grad.size() == 0) n.grad = Tensor(n.value.shape());
  return &n.grad;
}

const Tensor& Tape::grad(std::size_t id) {
  Node& n = nodes_.at(id);
  if (n.grad.size() == 0) n.grad = Tensor(n.value.shape());
  return n.grad;
}

void Tape::backward(const Var& root) {
  if (&root.tape() != this) throw Error("backward root belongs to another tape");
  Node& r = nodes_.at(root.id());
  if (r.value.size() != 1) {
    throw DimensionError("backward needs a scalar root, got " + shape_string(r.value.shape()));
  }
  if (!r.requires_grad) return;
  grad_buffer(root.id())->values()[0] += 1.0;
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.size() == 0) continue;
    if (n.backward) n.backward(*this, n.grad);
    if (n.param != nullptr) {
      auto& pg = n.param->grad;
      if (!pg.same_shape(n.value)) pg = Tensor(n.value.shape());
      for (std::size_t k = 0; k < pg.size(); ++k) pg[k] += n.grad[k];
    }
  }
}

namespace {

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()) + " differ");
  }
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_string(t.shape()));
  }
}

// Output of an elementwise map plus its local derivative.
template <typename F>
Var unary(const Var& x, F&& f) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  Tensor deriv(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    auto [y, d] = f(xv[i]);
    out[i] = y;
    deriv[i] = d;
  }
  const std::size_t xid = x.id();
  return x.tape().record(std::move(out), {x}, [xid, deriv = std::move(deriv)](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_buffer(xid)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * deriv[i];
    }
  });
}

}  // namespace

Var matmul(const Var& x, const Var& w) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  require_matrix(wv, "matmul");
  const std::size_t n = xv.rows(), a = xv.cols(), b = wv.cols();
  if (wv.rows() != a) {
    throw DimensionError("matmul: inner dims of " + shape_string(xv.shape()) + " and " +
                         shape_string(wv.shape()) + " disagree");
  }
  Tensor out({n, b});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < a; ++k) {
      const double xik = xv[i * a + k];
      for (std::size_t j = 0; j < b; ++j) out[i * b + j] += xik * wv[k * b + j];
    }
  }
  const std::size_t xid = x.id(), wid = w.id();
  return x.tape().record(std::move(out), {x, w}, [xid, wid, n, a, b](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(xid);
    const Tensor& wv = t.value(wid);
    if (Tensor* gx = t.grad_buffer(xid)) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < a; ++k) {
          double acc = 0.0;
          for (std::size_t j = 0; j < b; ++j) acc += g[i * b + j] * wv[k * b + j];
          (*gx)[i * a + k] += acc;
        }
    }
    if (Tensor* gw = t.grad_buffer(wid)) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < a; ++k) {
          const double xik = xv[i * a + k];
          for (std::size_t j = 0; j < b; ++j) (*gw)[k * b + j] += xik * g[i * b + j];
        }
    }
  });
}

Var affine(const Var& x, const Var& w, const Var& b) {
  Var prod = matmul(x, w);
  const Tensor& pv = prod.value();
  const Tensor& bv = b.value();
  const std::size_t n = pv.rows(), cols = pv.cols();
  if (bv.size() != cols) {
    throw DimensionError("affine: bias " + shape_string(bv.shape()) + " does not match output " +
                         shape_string(pv.shape()));
  }
  Tensor out = pv;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] += bv[j];
  const std::size_t pid = prod.id(), bid = b.id();
  return x.tape().record(std::move(out), {prod, b}, [pid, bid, n, cols](Tape& t, const Tensor& g) {
    if (Tensor* gp = t.grad_buffer(pid)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gp)[i] += g[i];
    }
    if (Tensor* gb = t.grad_buffer(bid)) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < cols; ++j) (*gb)[j] += g[i * cols + j];
    }
  });
}

Var add(const Var& a, const Var& b) {
  require_same(a.value(), b.value(), "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  const std::size_t aid = a.id(), bid = b.id();
  return a.tape().record(std::move(out), {a, b}, [aid, bid](Tape& t, const Tensor& g) {
    for (std::size_t id : {aid, bid}) {
      if (Tensor* gp = t.grad_buffer(id)) {
        for (std::size_t i = 0; i < g.size(); ++i) (*gp)[i] += g[i];
      }
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  const std::size_t aid = a.id(), bid = b.id();
  return a.tape().record(std::move(out), {a, b}, [aid, bid](Tape& t, const Tensor& g) {
    const Tensor& av = t.value(aid);
    const Tensor& bv = t.value(bid);
    if (Tensor* ga = t.grad_buffer(aid)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bv[i];
    }
    if (Tensor* gb = t.grad_buffer(bid)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * av[i];
    }
  });
}

Var scale(const Var& x, double factor) {
  return unary(x, [factor](double v) { return std::pair{v * factor, factor}; });
}

Var sum(const Var& x) {
  double total = 0.0;
  for (double v : x.value().values()) total += v;
  const std::size_t xid = x.id();
  return x.tape().record(Tensor({1}, {total}), {x}, [xid](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_buffer(xid)) {
      for (auto& v : gx->values()) v += g[0];
    }
  });
}

Var conv1d(const Var& x, const Var& kernel, std::size_t stride, std::size_t pad_left,
           std::size_t pad_right) {
  const Tensor& xv = x.value();
  const Tensor& kv = kernel.value();
  require_matrix(xv, "conv1d");
  if (kv.rank() != 3) {
    throw DimensionError("conv1d: kernel must be [k x c_in x c_out], got " + shape_string(kv.shape()));
  }
  if (stride == 0) throw DimensionError("conv1d: stride must be >= 1");
  const std::size_t n = xv.rows(), cin = xv.cols();
  const std::size_t k = kv.dim(0), cout = kv.dim(2);
  if (kv.dim(1) != cin) {
    throw DimensionError("conv1d: input " + shape_string(xv.shape()) + " and kernel " +
                         shape_string(kv.shape()) + " disagree on channels");
  }
  const std::size_t padded = n + pad_left + pad_right;
  if (padded < k) {
    throw DimensionError("conv1d: sequence of " + std::to_string(n) + " rows (padded " +
                         std::to_string(padded) + ") is shorter than kernel width " + std::to_string(k));
  }
  const std::size_t out_rows = (padded - k) / stride + 1;

  // Row r of the padded input maps to source row r - pad_left when in range.
  auto source_row = [n, pad_left](std::size_t padded_row) -> std::ptrdiff_t {
    const auto r = static_cast<std::ptrdiff_t>(padded_row) - static_cast<std::ptrdiff_t>(pad_left);
    return (r < 0 || r >= static_cast<std::ptrdiff_t>(n)) ? -1 : r;
  };

  Tensor out({out_rows, cout});
  for (std::size_t t = 0; t < out_rows; ++t) {
    for (std::size_t j = 0; j < k; ++j) {
      const auto src = source_row(t * stride + j);
      if (src < 0) continue;
      for (std::size_t c = 0; c < cin; ++c) {
        const double xv_tc = xv[static_cast<std::size_t>(src) * cin + c];
        const double* krow = &kv[(j * cin + c) * cout];
        for (std::size_t o = 0; o < cout; ++o) out[t * cout + o] += xv_tc * krow[o];
      }
    }
  }
  const std::size_t xid = x.id(), kid = kernel.id();
  return x.tape().record(
      std::move(out), {x, kernel},
      [=](Tape& tp, const Tensor& g) {
        const Tensor& xv = tp.value(xid);
        const Tensor& kv = tp.value(kid);
        Tensor* gx = tp.grad_buffer(xid);
        Tensor* gk = tp.grad_buffer(kid);
        for (std::size_t t = 0; t < out_rows; ++t) {
          for (std::size_t j = 0; j < k; ++j) {
            const auto src = source_row(t * stride + j);
            if (src < 0) continue;
            const auto s = static_cast<std::size_t>(src);
            for (std::size_t c = 0; c < cin; ++c) {
              const std::size_t kbase = (j * cin + c) * cout;
              double acc = 0.0;
              for (std::size_t o = 0; o < cout; ++o) {
                const double go = g[t * cout + o];
                acc += go * kv[kbase + o];
                if (gk) (*gk)[kbase + o] += go * xv[s * cin + c];
              }
              if (gx) (*gx)[s * cin + c] += acc;
            }
          }
        }
      });
}

Var conv1d_same(const Var& x, const Var& kernel) {
  const std::size_t k = kernel.value().dim(0);
  const std::size_t left = (k - 1) / 2;
  return conv1d(x, kernel, 1, left, k - 1 - left);
}

Var leaky_relu(const Var& x, double slope) {
  return unary(x, [slope](double v) { return v > 0.0 ? std::pair{v, 1.0} : std::pair{slope * v, slope}; });
}

Var sigmoid(const Var& x) {
  return unary(x, [](double v) {
    const double s = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    return std::pair{s, s * (1.0 - s)};
  });
}

Var neg_exp(const Var& x) {
  return unary(x, [](double v) {
    const double e = std::exp(v);
    return std::pair{-e, -e};
  });
}

Var softplus(const Var& x) {
  return unary(x, [](double v) {
    const double y = v > 30.0 ? v : std::log1p(std::exp(v));
    const double s = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    return std::pair{y, s};
  });
}

Var softmax_rows(const Var& x) {
  const Tensor& xv = x.value();
  const std::size_t n = xv.rows(), d = xv.cols();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < n; ++i) {
    double mx = xv[i * d];
    for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, xv[i * d + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      out[i * d + j] = std::exp(xv[i * d + j] - mx);
      z += out[i * d + j];
    }
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] /= z;
  }
  const std::size_t xid = x.id();
  Tensor probs = out;
  return x.tape().record(std::move(out), {x}, [xid, n, d, probs = std::move(probs)](Tape& t, const Tensor& g) {
    Tensor* gx = t.grad_buffer(xid);
    if (!gx) return;
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += g[i * d + j] * probs[i * d + j];
      for (std::size_t j = 0; j < d; ++j) (*gx)[i * d + j] += probs[i * d + j] * (g[i * d + j] - dot);
    }
  });
}

Var global_max_pool(const Var& x) {
  const Tensor& xv = x.value();
  const std::size_t n = xv.rows(), d = xv.cols();
  Tensor out({1, d});
  std::vector<std::size_t> argmax(d, 0);
  for (std::size_t j = 0; j < d; ++j) {
    double best = xv[j];
    for (std::size_t i = 1; i < n; ++i) {
      if (xv[i * d + j] > best) {
        best = xv[i * d + j];
        argmax[j] = i;
      }
    }
    out[j] = best;
  }
  const std::size_t xid = x.id();
  return x.tape().record(std::move(out), {x}, [xid, d, argmax = std::move(argmax)](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_buffer(xid)) {
      for (std::size_t j = 0; j < d; ++j) (*gx)[argmax[j] * d + j] += g[j];
    }
  });
}

Var gather_rows(const Var& x, std::vector<std::size_t> rows) {
  const Tensor& xv = x.value();
  const std::size_t n = xv.rows(), d = xv.cols();
  if (rows.empty()) throw DimensionError("gather_rows: empty row selection");
  Tensor out({rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= n) {
      throw DimensionError("gather_rows: row " + std::to_string(rows[i]) + " out of range for " +
                           shape_string(xv.shape()));
    }
    std::copy_n(&xv[rows[i] * d], d, &out[i * d]);
  }
  const std::size_t xid = x.id();
  return x.tape().record(std::move(out), {x}, [xid, d, rows = std::move(rows)](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_buffer(xid)) {
      for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < d; ++j) (*gx)[rows[i] * d + j] += g[i * d + j];
    }
  });
}

Var concat_rows(const Var& top, const Var& bottom) {
  const Tensor& a = top.value();
  const Tensor& b = bottom.value();
  if (a.cols() != b.cols()) {
    throw DimensionError("concat_rows: " + shape_string(a.shape()) + " and " + shape_string(b.shape()) +
                         " have different widths");
  }
  const std::size_t d = a.cols(), na = a.rows(), nb = b.rows();
  std::vector<double> data(a.values());
  data.insert(data.end(), b.values().begin(), b.values().end());
  const std::size_t tid = top.id(), bid = bottom.id();
  return top.tape().record(Tensor({na + nb, d}, std::move(data)), {top, bottom},
                           [tid, bid, na, d](Tape& t, const Tensor& g) {
                             if (Tensor* gt = t.grad_buffer(tid)) {
                               for (std::size_t i = 0; i < gt->size(); ++i) (*gt)[i] += g[i];
                             }
                             if (Tensor* gb = t.grad_buffer(bid)) {
                               for (std::size_t i = 0; i < gb->size(); ++i) (*gb)[i] += g[na * d + i];
                             }
                           });
}

Var cross_entropy_logits(const Var& logits, std::size_t target) {
  const Tensor& lv = logits.value();
  if (lv.rows() != 1) {
    throw DimensionError("cross_entropy_logits: expected one row of logits, got " + shape_string(lv.shape()));
  }
  const std::size_t p = lv.cols();
  if (target >= p) throw DimensionError("cross_entropy_logits: target index out of range");
  double mx = lv[0];
  for (std::size_t j = 1; j < p; ++j) mx = std::max(mx, lv[j]);
  double z = 0.0;
  for (std::size_t j = 0; j < p; ++j) z += std::exp(lv[j] - mx);
  const double loss = -(lv[target] - mx - std::log(z));
  std::vector<double> probs(p);
  for (std::size_t j = 0; j < p; ++j) probs[j] = std::exp(lv[j] - mx) / z;
  const std::size_t lid = logits.id();
  return logits.tape().record(Tensor({1}, {loss}), {logits},
                              [lid, target, probs = std::move(probs)](Tape& t, const Tensor& g) {
                                if (Tensor* gl = t.grad_buffer(lid)) {
                                  for (std::size_t j = 0; j < probs.size(); ++j) {
                                    (*gl)[j] += g[0] * (probs[j] - (j == target ? 1.0 : 0.0));
                                  }
                                }
                              });
}

Var binary_cross_entropy(const Var& prob, double label) {
  const Tensor& pv = prob.value();
  if (pv.size() != 1) {
    throw DimensionError("binary_cross_entropy: expected a scalar probability, got " + shape_string(pv.shape()));
  }
  const double raw = pv[0];
  const double p = std::clamp(raw, kProbClamp, 1.0 - kProbClamp);
  const bool clamped = p != raw;
  const double loss = -(label * std::log(p) + (1.0 - label) * std::log(1.0 - p));
  const double deriv = clamped ? 0.0 : (-label / p + (1.0 - label) / (1.0 - p));
  const std::size_t pid = prob.id();
  return prob.tape().record(Tensor({1}, {loss}), {prob}, [pid, deriv](Tape& t, const Tensor& g) {
    if (Tensor* gp = t.grad_buffer(pid)) (*gp)[0] += g[0] * deriv;
  });
}

Tensor matmul_affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tape t;
  return affine(t.constant(x), t.constant(w), t.constant(b)).value();
}

Tensor conv1d(const Tensor& x, const Tensor& kernel, std::size_t stride, std::size_t pad_left,
              std::size_t pad_right) {
  Tape t;
  return conv1d(t.constant(x), t.constant(kernel), stride, pad_left, pad_right).value();
}

Tensor leaky_relu(const Tensor& x, double slope) {
  Tape t;
  return leaky_relu(t.constant(x), slope).value();
}

Tensor sigmoid(const Tensor& x) {
  Tape t;
  return sigmoid(t.constant(x)).value();
}

Tensor softmax_rows(const Tensor& x) {
  Tape t;
  return softmax_rows(t.constant(x)).value();
}

Tensor global_max_pool(const Tensor& x) {
  Tape t;
  return global_max_pool(t.constant(x)).value();
}

}  // namespace topicrag
