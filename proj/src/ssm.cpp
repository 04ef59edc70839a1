#include "topicrag/ssm.hpp"

#include <cmath>

#include "topicrag/error.hpp"

namespace topicrag {

namespace {

// phi(z) = (e^z - 1) / z, the zero-order-hold input factor.
double zoh_phi(double z) { return std::abs(z) < kSsmSeriesSwitch ? 1.0 : std::expm1(z) / z; }

// phi'(z); the closed form cancels badly near 0, so switch to the series there.
double zoh_phi_prime(double z) {
  if (std::abs(z) < 1e-3) return 0.5 + z / 3.0 + z * z / 8.0 + z * z * z / 30.0;
  return (std::exp(z) * (z - 1.0) + 1.0) / (z * z);
}

struct Shapes {
  std::size_t steps, d_in, d_state, d_out;
};

Shapes check_shapes(const Tensor& x, std::size_t a_len, std::size_t delta_len, const Tensor& b, const Tensor& c,
                    const Tensor& d) {
  Shapes s{x.rows(), x.cols(), a_len, c.rows()};
  auto fail = [&](const std::string& what) {
    throw DimensionError("ssm: " + what + " (x " + shape_string(x.shape()) + ", B " + shape_string(b.shape()) +
                         ", C " + shape_string(c.shape()) + ", D " + shape_string(d.shape()) + ")");
  };
  if (delta_len != s.d_state) fail("delta has " + std::to_string(delta_len) + " entries for " +
                                   std::to_string(s.d_state) + " states");
  if (b.rank() != 2 || b.rows() != s.d_state || b.cols() != s.d_in) fail("B must be [d_state x d_in]");
  if (c.rank() != 2 || c.cols() != s.d_state) fail("C must be [d_out x d_state]");
  if (d.rank() != 2 || d.rows() != s.d_out || d.cols() != s.d_in) fail("D must be [d_out x d_in]");
  return s;
}

// h is filled with the stacked states [T x d_state]; returns y.
Tensor scan_forward(const Tensor& x, const std::vector<double>& a_bar, const Tensor& b_bar, const Tensor& c,
                    const Tensor& d, const Shapes& s, Tensor* h_out) {
  Tensor y({s.steps, s.d_out});
  std::vector<double> h(s.d_state, 0.0);
  for (std::size_t t = 0; t < s.steps; ++t) {
    const double* xt = &x[t * s.d_in];
    for (std::size_t i = 0; i < s.d_state; ++i) {
      double acc = a_bar[i] * h[i];
      for (std::size_t j = 0; j < s.d_in; ++j) acc += b_bar[i * s.d_in + j] * xt[j];
      h[i] = acc;
    }
    if (h_out) std::copy(h.begin(), h.end(), &(*h_out)[t * s.d_state]);
    for (std::size_t o = 0; o < s.d_out; ++o) {
      double acc = 0.0;
      for (std::size_t i = 0; i < s.d_state; ++i) acc += c[o * s.d_state + i] * h[i];
      for (std::size_t j = 0; j < s.d_in; ++j) acc += d[o * s.d_in + j] * xt[j];
      y[t * s.d_out + o] = acc;
    }
  }
  return y;
}

}  // namespace

DiscreteSsm ssm_discretize(std::span<const double> a_diag, const Tensor& b, std::span<const double> delta) {
  const std::size_t n = a_diag.size();
  if (delta.size() != n) throw DimensionError("ssm_discretize: delta and A diagonal lengths differ");
  if (b.rank() != 2 || b.rows() != n) {
    throw DimensionError("ssm_discretize: B " + shape_string(b.shape()) + " must have " + std::to_string(n) +
                         " rows");
  }
  DiscreteSsm out{std::vector<double>(n), Tensor(b.shape())};
  const std::size_t d_in = b.cols();
  for (std::size_t i = 0; i < n; ++i) {
    if (!(delta[i] > 0.0)) throw ValidationError("ssm_discretize: timescale delta must be > 0");
    const double z = delta[i] * a_diag[i];
    out.a_bar[i] = std::exp(z);
    const double factor = zoh_phi(z) * delta[i];
    for (std::size_t j = 0; j < d_in; ++j) out.b_bar[i * d_in + j] = factor * b[i * d_in + j];
  }
  return out;
}

DiscreteSsm ssm_discretize(std::span<const double> a_diag, const Tensor& b, double delta) {
  std::vector<double> deltas(a_diag.size(), delta);
  return ssm_discretize(a_diag, b, deltas);
}

Tensor ssm_scan(const Tensor& x, const DiscreteSsm& sys, const Tensor& c, const Tensor& d) {
  const Shapes s = check_shapes(x, sys.a_bar.size(), sys.a_bar.size(), sys.b_bar, c, d);
  return scan_forward(x, sys.a_bar, sys.b_bar, c, d, s, nullptr);
}

Var selective_scan(const Var& x, const Var& a_diag, const Var& delta, const Var& b, const Var& c, const Var& d) {
  const Tensor& xv = x.value();
  const Tensor& av = a_diag.value();
  const Tensor& dv = delta.value();
  const Shapes s = check_shapes(xv, av.size(), dv.size(), b.value(), c.value(), d.value());
  const DiscreteSsm sys = ssm_discretize(av.values(), b.value(), dv.values());
  Tensor h({s.steps, s.d_state});
  Tensor y = scan_forward(xv, sys.a_bar, sys.b_bar, c.value(), d.value(), s, &h);

  const std::size_t ids[6] = {x.id(), a_diag.id(), delta.id(), b.id(), c.id(), d.id()};
  return x.tape().record(
      std::move(y), {x, a_diag, delta, b, c, d},
      [s, sys, h = std::move(h), ids](Tape& t, const Tensor& gy) {
        const auto [xid, aid, did, bid, cid, dmid] = ids;
        const Tensor& xv = t.value(xid);
        const Tensor& av = t.value(aid);
        const Tensor& dv = t.value(did);
        const Tensor& bv = t.value(bid);
        const Tensor& cv = t.value(cid);
        const Tensor& dmv = t.value(dmid);
        Tensor* gx = t.grad_buffer(xid);
        Tensor* gc = t.grad_buffer(cid);
        Tensor* gd = t.grad_buffer(dmid);

        std::vector<double> g_abar(s.d_state, 0.0);
        Tensor g_bbar({s.d_state, s.d_in});
        std::vector<double> carry(s.d_state, 0.0), gh(s.d_state);
        for (std::size_t t_ = s.steps; t_-- > 0;) {
          const double* xt = &xv[t_ * s.d_in];
          const double* gyt = &gy[t_ * s.d_out];
          const double* ht = &h[t_ * s.d_state];
          for (std::size_t i = 0; i < s.d_state; ++i) {
            double acc = carry[i];
            for (std::size_t o = 0; o < s.d_out; ++o) acc += cv[o * s.d_state + i] * gyt[o];
            gh[i] = acc;
          }
          for (std::size_t i = 0; i < s.d_state; ++i) {
            const double h_prev = t_ == 0 ? 0.0 : h[(t_ - 1) * s.d_state + i];
            g_abar[i] += gh[i] * h_prev;
            for (std::size_t j = 0; j < s.d_in; ++j) g_bbar[i * s.d_in + j] += gh[i] * xt[j];
            carry[i] = sys.a_bar[i] * gh[i];
          }
          if (gx) {
            for (std::size_t j = 0; j < s.d_in; ++j) {
              double acc = 0.0;
              for (std::size_t i = 0; i < s.d_state; ++i) acc += sys.b_bar[i * s.d_in + j] * gh[i];
              for (std::size_t o = 0; o < s.d_out; ++o) acc += dmv[o * s.d_in + j] * gyt[o];
              (*gx)[t_ * s.d_in + j] += acc;
            }
          }
          if (gc) {
            for (std::size_t o = 0; o < s.d_out; ++o)
              for (std::size_t i = 0; i < s.d_state; ++i) (*gc)[o * s.d_state + i] += gyt[o] * ht[i];
          }
          if (gd) {
            for (std::size_t o = 0; o < s.d_out; ++o)
              for (std::size_t j = 0; j < s.d_in; ++j) (*gd)[o * s.d_in + j] += gyt[o] * xt[j];
          }
        }

        // Chain through a_bar = e^z and b_bar = phi(z) * delta * B, z = delta * a.
        Tensor* ga = t.grad_buffer(aid);
        Tensor* gdelta = t.grad_buffer(did);
        Tensor* gb = t.grad_buffer(bid);
        for (std::size_t i = 0; i < s.d_state; ++i) {
          const double a = av[i], dt = dv[i], z = dt * a;
          const double ez = sys.a_bar[i];
          const double phi = zoh_phi(z), dphi = zoh_phi_prime(z);
          double gb_dot_b = 0.0;
          for (std::size_t j = 0; j < s.d_in; ++j) {
            const double g = g_bbar[i * s.d_in + j];
            gb_dot_b += g * bv[i * s.d_in + j];
            if (gb) (*gb)[i * s.d_in + j] += g * phi * dt;
          }
          if (ga) (*ga)[i] += g_abar[i] * dt * ez + gb_dot_b * dphi * dt * dt;
          if (gdelta) (*gdelta)[i] += g_abar[i] * a * ez + gb_dot_b * (dphi * a * dt + phi);
        }
      });
}

}  // namespace topicrag
