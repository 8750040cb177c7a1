// Structured regime updates: static and context-conditioned couplings,
// low-rank modulation, variable-wise shape functions and sticky routing.
#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "ccssix/ad.hpp"
#include "ccssix/linalg.hpp"
#include "ccssix/model.hpp"

namespace ccssix {

using std::exp;
using std::log;
using std::log1p;
using std::sqrt;
using std::tanh;
using std::lgamma;

/// Per-channel contributions of one latent update. `total` is the entrywise
/// sum of the six channels.
template <class T>
struct ChannelsT {
  std::vector<T> state, control, disturbance, bias, additive, residual, total;

  explicit ChannelsT(int dz = 0)
      : state(static_cast<std::size_t>(dz), T(0.0)),
        control(state), disturbance(state), bias(state), additive(state), residual(state), total(state) {}

  void sum_total() {
    for (std::size_t i = 0; i < total.size(); ++i)
      total[i] = state[i] + control[i] + disturbance[i] + bias[i] + additive[i] + residual[i];
  }
};

using ChannelDecomposition = ChannelsT<double>;

enum class Channel { State = 0, Control, Disturbance, Bias, Additive, Residual };
inline constexpr int kNumChannels = 6;
inline constexpr const char* kChannelNames[kNumChannels] = {"state",    "control",  "disturbance",
                                                            "bias",     "additive", "residual"};

template <class T>
const std::vector<T>& channel(const ChannelsT<T>& c, Channel ch) {
  switch (ch) {
    case Channel::State: return c.state;
    case Channel::Control: return c.control;
    case Channel::Disturbance: return c.disturbance;
    case Channel::Bias: return c.bias;
    case Channel::Additive: return c.additive;
    case Channel::Residual: return c.residual;
  }
  return c.total;
}

namespace detail {

/// out[i] = base[i] + sum_r coeffs[r] * deltas[r*n + i]
template <class T, class P>
void modulate(const P* base, const P* deltas, const T* coeffs, int R, int n, T* out) {
  for (int i = 0; i < n; ++i) {
    T acc = base[i];
    for (int r = 0; r < R; ++r) acc = acc + coeffs[r] * deltas[r * n + i];
    out[i] = acc;
  }
}

/// y += M x for a rows x cols row-major block.
template <class T, class P, class X>
void gemv_add(const P* M, int rows, int cols, const X* x, T* y) {
  for (int i = 0; i < rows; ++i) {
    T acc = y[i];
    for (int j = 0; j < cols; ++j) acc = acc + M[i * cols + j] * x[j];
    y[i] = acc;
  }
}

/// coeffs[r] = tanh(W[r,:] . gamma + b[r])
template <class T, class P>
void coefficients(const P* W, const P* b, int R, const T* gamma, int dg, T* coeffs) {
  for (int r = 0; r < R; ++r) {
    T acc = b[r];
    for (int j = 0; j < dg; ++j) acc = acc + W[r * dg + j] * gamma[j];
    coeffs[r] = tanh(acc);
  }
}

/// Piecewise-linear interpolation on equally spaced knots over [lo, hi],
/// clamped outside the range.
template <class T, class P>
T piecewise_linear(const P* knots, int n, double lo, double hi, const T& x) {
  const double h = (hi - lo) / (n - 1);
  const double xv = value(x);
  if (!(xv > lo)) return T(knots[0]);
  if (!(xv < hi)) return T(knots[n - 1]);
  int i = static_cast<int>(std::floor((xv - lo) / h));
  i = std::clamp(i, 0, n - 2);
  const T frac = (x - lo) / h - static_cast<double>(i);
  return knots[i] + frac * (knots[i + 1] - knots[i]);
}

}  // namespace detail

/// Read-only view of regime k's parameters inside a flat parameter span.
template <class T>
struct RegimeView {
  const T* theta;
  const RegimeOffsets* off;
  const ModelDims* dims;
  const ModelConfig* cfg;

  const T* at(std::size_t o) const { return theta + o; }
};

template <class T>
RegimeView<T> regime_view(const ModelParams& mp, std::span<const T> theta, int k) {
  return RegimeView<T>{theta.data(), &mp.layout.regime(k), &mp.dims, &mp.config};
}

namespace detail {

template <class T>
void shape_terms(const RegimeView<T>& p, const T* z, const T* u, const T* w, const T* gamma,
                 std::vector<T>& out) {
  const ModelDims& d = *p.dims;
  const int dz = d.dz(), dg = d.d_gamma(), nk = d.n_knots;
  const int nv = d.n_shape();
  for (int v = 0; v < nv; ++v) {
    const T x = v < dz ? z[v] : (v < dz + d.n_u ? u[v - dz] : w[v - dz - d.n_u]);
    T phi = piecewise_linear(p.at(p.off->knots) + v * nk, nk, p.cfg->knot_lo, p.cfg->knot_hi, x);
    if (gamma != nullptr) {
      T s = p.at(p.off->sb)[v];
      T o = p.at(p.off->ob)[v];
      const T* sw = p.at(p.off->sW) + v * dg;
      const T* ow = p.at(p.off->oW) + v * dg;
      for (int j = 0; j < dg; ++j) {
        s = s + sw[j] * gamma[j];
        o = o + ow[j] * gamma[j];
      }
      phi = (1.0 + tanh(s)) * phi + tanh(o);
    }
    const T* load = p.at(p.off->load) + v * dz;
    for (int i = 0; i < dz; ++i) out[static_cast<std::size_t>(i)] = out[static_cast<std::size_t>(i)] + load[i] * phi;
  }
}

template <class T>
void residual_term(const RegimeView<T>& p, const T* z, const T* u, const T* w, std::vector<T>& out) {
  const ModelDims& d = *p.dims;
  const int dz = d.dz(), nin = d.n_residual_in();
  std::vector<T> in(static_cast<std::size_t>(nin));
  for (int i = 0; i < dz; ++i) in[static_cast<std::size_t>(i)] = z[i];
  for (int i = 0; i < d.n_u; ++i) in[static_cast<std::size_t>(dz + i)] = u[i];
  for (int i = 0; i < d.n_w; ++i) in[static_cast<std::size_t>(dz + d.n_u + i)] = w[i];
  const T* W = p.at(p.off->rW);
  const T* b = p.at(p.off->rb);
  for (int i = 0; i < dz; ++i) {
    T acc = b[i];
    for (int j = 0; j < nin; ++j) acc = acc + W[i * nin + j] * in[static_cast<std::size_t>(j)];
    out[static_cast<std::size_t>(i)] = p.cfg->alpha * tanh(acc);
  }
}

}  // namespace detail

/// Static structured update: A0 z + B0 u + E0 w + d0 + sum of shape terms.
template <class T>
ChannelsT<T> static_update_t(const RegimeView<T>& p, const T* z, const T* u, const T* w) {
  const ModelDims& d = *p.dims;
  const int dz = d.dz();
  ChannelsT<T> c(dz);
  detail::gemv_add(p.at(p.off->A0), dz, dz, z, c.state.data());
  detail::gemv_add(p.at(p.off->B0), dz, d.n_u, u, c.control.data());
  detail::gemv_add(p.at(p.off->E0), dz, d.n_w, w, c.disturbance.data());
  for (int i = 0; i < dz; ++i) c.bias[static_cast<std::size_t>(i)] = p.at(p.off->d0)[i];
  detail::shape_terms<T>(p, z, u, w, nullptr, c.additive);
  if (p.cfg->alpha > 0.0) detail::residual_term(p, z, u, w, c.residual);
  c.sum_total();
  return c;
}

/// Context-conditioned update with low-rank modulated couplings.
template <class T>
ChannelsT<T> adaptive_update_t(const RegimeView<T>& p, const T* z, const T* u, const T* w, const T* gamma) {
  const ModelDims& d = *p.dims;
  const int dz = d.dz(), dg = d.d_gamma(), R = d.R;
  ChannelsT<T> c(dz);
  std::vector<T> coeff(static_cast<std::size_t>(R));
  std::vector<T> M(static_cast<std::size_t>(dz * std::max({dz, d.n_u, d.n_w, 1})));

  detail::coefficients(p.at(p.off->cAW), p.at(p.off->cAb), R, gamma, dg, coeff.data());
  detail::modulate(p.at(p.off->A0), p.at(p.off->dA), coeff.data(), R, dz * dz, M.data());
  detail::gemv_add(M.data(), dz, dz, z, c.state.data());

  if (d.n_u > 0) {
    detail::coefficients(p.at(p.off->cBW), p.at(p.off->cBb), R, gamma, dg, coeff.data());
    detail::modulate(p.at(p.off->B0), p.at(p.off->dB), coeff.data(), R, dz * d.n_u, M.data());
    detail::gemv_add(M.data(), dz, d.n_u, u, c.control.data());
  }
  if (d.n_w > 0) {
    detail::coefficients(p.at(p.off->cEW), p.at(p.off->cEb), R, gamma, dg, coeff.data());
    detail::modulate(p.at(p.off->E0), p.at(p.off->dE), coeff.data(), R, dz * d.n_w, M.data());
    detail::gemv_add(M.data(), dz, d.n_w, w, c.disturbance.data());
  }

  for (int i = 0; i < dz; ++i) c.bias[static_cast<std::size_t>(i)] = p.at(p.off->d0)[i];
  detail::gemv_add(p.at(p.off->dW), dz, dg, gamma, c.bias.data());
  detail::shape_terms<T>(p, z, u, w, gamma, c.additive);
  if (p.cfg->alpha > 0.0) detail::residual_term(p, z, u, w, c.residual);
  c.sum_total();
  return c;
}

/// Context-conditioned matrices of one regime, evaluated at gamma.
struct ModulatedMatrices {
  Matrix A, B, E;
};

inline ModulatedMatrices modulated_matrices(const ModelParams& mp, int k, std::span<const double> gamma) {
  const ModelDims& d = mp.dims;
  if (static_cast<int>(gamma.size()) != d.d_gamma()) throw ShapeError("gamma dimension mismatch");
  const auto p = regime_view<double>(mp, mp.theta, k);
  const int dz = d.dz(), R = d.R, dg = d.d_gamma();
  std::vector<double> coeff(static_cast<std::size_t>(R));
  ModulatedMatrices out{Matrix(dz, dz), Matrix(dz, d.n_u), Matrix(dz, d.n_w)};
  detail::coefficients(p.at(p.off->cAW), p.at(p.off->cAb), R, gamma.data(), dg, coeff.data());
  detail::modulate(p.at(p.off->A0), p.at(p.off->dA), coeff.data(), R, dz * dz, out.A.data.data());
  detail::coefficients(p.at(p.off->cBW), p.at(p.off->cBb), R, gamma.data(), dg, coeff.data());
  detail::modulate(p.at(p.off->B0), p.at(p.off->dB), coeff.data(), R, dz * d.n_u, out.B.data.data());
  detail::coefficients(p.at(p.off->cEW), p.at(p.off->cEb), R, gamma.data(), dg, coeff.data());
  detail::modulate(p.at(p.off->E0), p.at(p.off->dE), coeff.data(), R, dz * d.n_w, out.E.data.data());
  return out;
}

/// base + sum_r coeffs[r] * deltas[r]
inline Matrix modulated_matrix(const Matrix& base, std::span<const Matrix> deltas, std::span<const double> coeffs) {
  if (deltas.size() != coeffs.size()) throw ShapeError("modulated_matrix: deltas and coefficients differ in length");
  Matrix out = base;
  for (std::size_t r = 0; r < deltas.size(); ++r) {
    if (deltas[r].rows != base.rows || deltas[r].cols != base.cols)
      throw ShapeError("modulated_matrix: delta shape differs from base");
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += coeffs[r] * deltas[r].data[i];
  }
  return out;
}

namespace detail {
inline void check_inputs(const ModelDims& d, std::span<const double> z, std::span<const double> u,
                         std::span<const double> w) {
  if (static_cast<int>(z.size()) != d.dz() || static_cast<int>(u.size()) != d.n_u ||
      static_cast<int>(w.size()) != d.n_w)
    throw ShapeError("update inputs do not match model dimensions");
  if (!all_finite(z) || !all_finite(u) || !all_finite(w)) throw NumericError("non-finite update input");
}
}  // namespace detail

inline ChannelDecomposition static_update(const ModelParams& mp, int k, std::span<const double> z,
                                          std::span<const double> u, std::span<const double> w) {
  detail::check_inputs(mp.dims, z, u, w);
  return static_update_t<double>(regime_view<double>(mp, mp.theta, k), z.data(), u.data(), w.data());
}

inline ChannelDecomposition adaptive_update(const ModelParams& mp, int k, std::span<const double> z,
                                            std::span<const double> u, std::span<const double> w,
                                            std::span<const double> gamma) {
  detail::check_inputs(mp.dims, z, u, w);
  if (static_cast<int>(gamma.size()) != mp.dims.d_gamma()) throw ShapeError("gamma dimension mismatch");
  if (!all_finite(gamma)) throw NumericError("non-finite context vector");
  return adaptive_update_t<double>(regime_view<double>(mp, mp.theta, k), z.data(), u.data(), w.data(),
                                   gamma.data());
}

// ---------------------------------------------------------------------------
// Sticky routing

struct GateState {
  std::vector<double> probs;
  double kappa = 0.0;
  int K() const { return static_cast<int>(probs.size()); }
  int argmax() const {
    return static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
  }
};

template <class T>
void softmax_inplace(std::vector<T>& x) {
  double mx = value(x[0]);
  for (const auto& v : x) mx = std::max(mx, value(v));
  T s = 0.0;
  for (auto& v : x) {
    v = exp(v - mx);
    s = s + v;
  }
  for (auto& v : x) v = v / s;
}

/// Adds the stickiness bias to the previous argmax regime and normalizes.
inline GateState route_logits(const GateState& prev, std::span<const double> logits) {
  if (static_cast<int>(logits.size()) != prev.K()) throw ShapeError("route: logit count differs from K");
  if (!all_finite(logits)) throw NumericError("route: non-finite logits");
  std::vector<double> l(logits.begin(), logits.end());
  l[static_cast<std::size_t>(prev.argmax())] += prev.kappa;
  softmax_inplace(l);
  return GateState{std::move(l), prev.kappa};
}

/// Routing with the model's gate map applied to `features` (context vector
/// followed by the step's standardized controls and disturbances).
inline GateState route(const ModelParams& mp, const GateState& prev, std::span<const double> features) {
  const ModelDims& d = mp.dims;
  if (static_cast<int>(features.size()) != d.n_route()) throw ShapeError("route: feature dimension mismatch");
  const auto& g = mp.layout.global();
  std::vector<double> logits(static_cast<std::size_t>(d.K));
  for (int k = 0; k < d.K; ++k) {
    double acc = mp.theta[g.gate_b + static_cast<std::size_t>(k)];
    for (int j = 0; j < d.n_route(); ++j)
      acc += mp.theta[g.gate_W + static_cast<std::size_t>(k * d.n_route() + j)] * features[static_cast<std::size_t>(j)];
    logits[static_cast<std::size_t>(k)] = acc;
  }
  return route_logits(prev, logits);
}

}  // namespace ccssix
