// Inspection artifacts of a fitted model: aggregated dependency edges,
// mechanistic edge checks, eigenmode time-scales, shape-function response
// curves, regime statistics, spike attribution and the Causal Isolation
// Index. All functions are pure.
#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "ccssix/validity.hpp"

namespace ccssix {

// ---------------------------------------------------------------------------
// Dependency edges

/// Per regime, the gate-weighted time average of |A_k(gamma_t)| over the
/// steps of `window` (a plain average where regime k never carries weight).
inline std::vector<Matrix> aggregate_state_matrices(const ModelParams& mp, const std::vector<Trajectory>& window) {
  const int K = mp.dims.K, dz = mp.dims.dz();
  std::vector<Matrix> acc(static_cast<std::size_t>(K), Matrix(dz, dz)), plain = acc;
  std::vector<double> wsum(static_cast<std::size_t>(K), 0.0);
  int n = 0;
  for (const auto& tr : window)
    for (std::size_t t = 0; t < tr.gamma.size(); ++t) {
      ++n;
      for (int k = 0; k < K; ++k) {
        const auto A = regime_matrices(mp, k, tr.gamma[t]).A;
        const double p = tr.probs[t][static_cast<std::size_t>(k)];
        wsum[static_cast<std::size_t>(k)] += p;
        for (std::size_t i = 0; i < A.data.size(); ++i) {
          acc[static_cast<std::size_t>(k)].data[i] += p * std::fabs(A.data[i]);
          plain[static_cast<std::size_t>(k)].data[i] += std::fabs(A.data[i]);
        }
      }
    }
  if (n == 0) throw ShapeError("edge aggregation needs at least one trajectory step");
  for (int k = 0; k < K; ++k) {
    auto& m = acc[static_cast<std::size_t>(k)];
    const double w = wsum[static_cast<std::size_t>(k)];
    if (w > 1e-12)
      for (auto& x : m.data) x /= w;
    else
      for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = plain[static_cast<std::size_t>(k)].data[i] / n;
  }
  return acc;
}

struct EdgeReport {
  int regime = 0;
  int affected = 0;  // row i
  int cause = 0;     // column j
  std::string affected_name, cause_name;
  double weight = 0.0;
  double pct_of_row_max = 0.0;
};

inline double pct_of_row_max(const Matrix& W, int i, int j) {
  double mx = 0.0;
  for (int c = 0; c < W.cols; ++c) mx = std::max(mx, std::fabs(W(i, c)));
  return mx > 0.0 ? 100.0 * std::fabs(W(i, j)) / mx : 0.0;
}

/// The n largest |W[i, j]|, ties by (i, j).
inline std::vector<EdgeReport> top_edges(const Matrix& W, int regime, int n, const std::vector<std::string>& names = {}) {
  std::vector<EdgeReport> all;
  auto name = [&](int i) { return i < static_cast<int>(names.size()) ? names[static_cast<std::size_t>(i)] : "z" + std::to_string(i); };
  for (int i = 0; i < W.rows; ++i)
    for (int j = 0; j < W.cols; ++j)
      all.push_back(EdgeReport{regime, i, j, name(i), name(j), std::fabs(W(i, j)), pct_of_row_max(W, i, j)});
  std::stable_sort(all.begin(), all.end(), [](const EdgeReport& a, const EdgeReport& b) { return a.weight > b.weight; });
  if (n >= 0 && static_cast<std::size_t>(n) < all.size()) all.resize(static_cast<std::size_t>(n));
  return all;
}

/// Ranks with ties averaged (1-based).
inline std::vector<double> average_ranks(const std::vector<double>& x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t m = i; m <= j; ++m) r[idx[m]] = avg;
    i = j + 1;
  }
  return r;
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n, mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return saa > 0.0 && sbb > 0.0 ? sab / std::sqrt(saa * sbb) : std::numeric_limits<double>::quiet_NaN();
}

/// Spearman correlation of the edge magnitudes of two regimes.
inline double edge_rank_correlation(const Matrix& W1, const Matrix& W2) {
  if (W1.rows != W2.rows || W1.cols != W2.cols) throw ShapeError("edge matrices differ in shape");
  std::vector<double> a, b;
  for (double x : W1.data) a.push_back(std::fabs(x));
  for (double x : W2.data) b.push_back(std::fabs(x));
  return pearson(average_ranks(a), average_ranks(b));
}

struct PriorEdge {
  std::string affected, cause;
};

struct EdgeMatch {
  PriorEdge edge;
  double weight = 0.0;
  double pct_of_row_max = 0.0;
  bool match = false;
};

/// A prior edge is recovered iff its weight is at least threshold_pct of the
/// largest weight in the affected variable's row.
inline std::vector<EdgeMatch> mechanistic_edge_check(const Matrix& W, const std::vector<std::string>& names,
                                                     const std::vector<PriorEdge>& prior, double threshold_pct = 5.0) {
  auto find = [&](const std::string& n) {
    auto it = std::find(names.begin(), names.end(), n);
    if (it == names.end()) throw ShapeError("unknown variable '" + n + "' in prior edge");
    return static_cast<int>(it - names.begin());
  };
  std::vector<EdgeMatch> out;
  for (const auto& e : prior) {
    const int i = find(e.affected), j = find(e.cause);
    EdgeMatch m{e, std::fabs(W(i, j)), pct_of_row_max(W, i, j), false};
    m.match = m.pct_of_row_max >= threshold_pct;
    out.push_back(m);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Eigenmode time-scales

struct Mode {
  std::complex<double> eigenvalue;
  double modulus = 0.0;
  double tau = 0.0;  // minutes; infinite for non-decaying modes
  bool decaying = false;
};

/// Modes of the one-step map I + g * A with g = dt / dt_ref; tau =
/// -dt / ln|lambda| for |lambda| < 1, sorted by decreasing tau.
inline std::vector<Mode> eigenmode_timescales(const Matrix& A, double dt, double dt_ref) {
  if (A.rows != A.cols) throw ShapeError("eigenmodes need a square matrix");
  if (!(dt > 0.0 && dt_ref > 0.0)) throw ShapeError("intervals must be positive");
  const double g = dt / dt_ref;
  Eigen::MatrixXd M(A.rows, A.cols);
  for (int i = 0; i < A.rows; ++i)
    for (int j = 0; j < A.cols; ++j) M(i, j) = (i == j ? 1.0 : 0.0) + g * A(i, j);
  Eigen::EigenSolver<Eigen::MatrixXd> es(M, false);
  std::vector<Mode> out;
  for (int i = 0; i < A.rows; ++i) {
    Mode m;
    m.eigenvalue = es.eigenvalues()[i];
    m.modulus = std::abs(m.eigenvalue);
    m.decaying = m.modulus < 1.0 - 1e-12;
    m.tau = m.decaying ? -dt / std::log(m.modulus) : std::numeric_limits<double>::infinity();
    out.push_back(m);
  }
  std::stable_sort(out.begin(), out.end(), [](const Mode& a, const Mode& b) { return a.tau > b.tau; });
  return out;
}

inline std::vector<Mode> eigenmode_timescales(const ModelParams& mp, int regime, std::span<const double> gamma) {
  return eigenmode_timescales(regime_matrices(mp, regime, gamma).A, mp.config.dt_ref, mp.config.dt_ref);
}

// ---------------------------------------------------------------------------
// Shape-function response curves

/// Index of a shape variable by name: latent coordinates, then controls,
/// then disturbances.
inline int shape_variable(const ModelParams& mp, const std::string& name) {
  const int dz = mp.dims.dz();
  for (int i = 0; i < dz; ++i)
    if (latent_name(mp, i) == name) return i;
  for (int i = 0; i < mp.dims.n_u; ++i)
    if (input_name(mp.names.controls, "u", i) == name) return dz + i;
  for (int i = 0; i < mp.dims.n_w; ++i)
    if (input_name(mp.names.disturbances, "w", i) == name) return dz + mp.dims.n_u + i;
  throw ShapeError("unknown shape variable '" + name + "'");
}

struct ResponseCurve {
  int variable = 0;
  int regime = 0;
  std::vector<double> grid, value;  // standardized input, loading-scaled phi
  double loading_norm = 0.0;
};

/// ||loading_v|| * phi_v(x) for regime k at the unmodulated shape.
inline double shape_response(const ModelParams& mp, int k, int v, double x) {
  const auto& off = mp.layout.regime(k);
  const int nk = mp.dims.n_knots, dz = mp.dims.dz();
  const double phi = detail::piecewise_linear(mp.theta.data() + off.knots + static_cast<std::size_t>(v * nk), nk,
                                              mp.config.knot_lo, mp.config.knot_hi, x);
  double l2 = 0.0;
  for (int i = 0; i < dz; ++i) l2 += square(mp.theta[off.load + static_cast<std::size_t>(v * dz + i)]);
  return std::sqrt(l2) * phi;
}

inline ResponseCurve response_curve(const ModelParams& mp, int k, int v, const std::vector<double>& grid) {
  if (v < 0 || v >= mp.dims.n_shape()) throw ShapeError("shape variable out of range");
  ResponseCurve c;
  c.variable = v;
  c.regime = k;
  c.grid = grid;
  for (double x : grid) c.value.push_back(shape_response(mp, k, v, x));
  const auto& off = mp.layout.regime(k);
  double l2 = 0.0;
  for (int i = 0; i < mp.dims.dz(); ++i) l2 += square(mp.theta[off.load + static_cast<std::size_t>(v * mp.dims.dz() + i)]);
  c.loading_norm = std::sqrt(l2);
  return c;
}

/// Selection score: variance of the response over samples of the variable's
/// standardized values.
inline double curve_importance(const ModelParams& mp, int k, int v, const std::vector<double>& samples) {
  if (samples.empty()) throw ShapeError("curve importance needs samples");
  std::vector<double> r;
  for (double x : samples) r.push_back(shape_response(mp, k, v, x));
  const double m = std::accumulate(r.begin(), r.end(), 0.0) / static_cast<double>(r.size());
  double s = 0.0;
  for (double x : r) s += (x - m) * (x - m);
  return s / static_cast<double>(r.size());
}

// ---------------------------------------------------------------------------
// Regime statistics

struct RegimeStats {
  std::vector<double> occupancy;
  std::vector<double> mean_dwell;  // mean run length, 0 if never visited
  std::vector<std::vector<int>> transitions;  // counts of (label_t, label_t+1)
};

inline RegimeStats regime_stats(const std::vector<int>& labels, int K) {
  RegimeStats s;
  s.occupancy.assign(static_cast<std::size_t>(K), 0.0);
  s.mean_dwell.assign(static_cast<std::size_t>(K), 0.0);
  s.transitions.assign(static_cast<std::size_t>(K), std::vector<int>(static_cast<std::size_t>(K), 0));
  if (labels.empty()) return s;
  std::vector<int> runs(static_cast<std::size_t>(K), 0);
  for (std::size_t t = 0; t < labels.size(); ++t) {
    const int k = labels[t];
    if (k < 0 || k >= K) throw ShapeError("regime label out of range");
    s.occupancy[static_cast<std::size_t>(k)] += 1.0;
    if (t == 0 || labels[t - 1] != k) ++runs[static_cast<std::size_t>(k)];
    if (t + 1 < labels.size()) ++s.transitions[static_cast<std::size_t>(k)][static_cast<std::size_t>(labels[t + 1])];
  }
  for (int k = 0; k < K; ++k) {
    const auto kk = static_cast<std::size_t>(k);
    if (runs[kk] > 0) s.mean_dwell[kk] = s.occupancy[kk] / runs[kk];
    s.occupancy[kk] /= static_cast<double>(labels.size());
  }
  return s;
}

/// Most frequent label per consecutive window (ties to the smaller label).
inline std::vector<int> modal_labels(const std::vector<int>& labels, int window) {
  std::vector<int> out;
  for (std::size_t b = 0; b < labels.size(); b += static_cast<std::size_t>(window)) {
    std::map<int, int> c;
    for (std::size_t t = b; t < std::min(labels.size(), b + static_cast<std::size_t>(window)); ++t) ++c[labels[t]];
    int best = c.begin()->first, cnt = -1;
    for (auto [k, n] : c)
      if (n > cnt) best = k, cnt = n;
    out.push_back(best);
  }
  return out;
}

/// Cramer's V of the contingency table of two label sequences; 0 when
/// either sequence has a single label.
inline double cramers_v(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size() || a.empty()) throw ShapeError("cramers_v needs equal, nonempty label sequences");
  std::map<int, int> ra, cb;
  for (int x : a) ra.emplace(x, static_cast<int>(ra.size()));
  for (int x : b) cb.emplace(x, static_cast<int>(cb.size()));
  const int r = static_cast<int>(ra.size()), c = static_cast<int>(cb.size());
  if (r < 2 || c < 2) return 0.0;
  std::vector<double> tab(static_cast<std::size_t>(r * c), 0.0), rs(static_cast<std::size_t>(r), 0.0), cs(static_cast<std::size_t>(c), 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const int x = ra[a[i]], y = cb[b[i]];
    tab[static_cast<std::size_t>(x * c + y)] += 1.0;
    rs[static_cast<std::size_t>(x)] += 1.0;
    cs[static_cast<std::size_t>(y)] += 1.0;
  }
  const double n = static_cast<double>(a.size());
  double chi2 = 0.0;
  for (int x = 0; x < r; ++x)
    for (int y = 0; y < c; ++y) {
      const double e = rs[static_cast<std::size_t>(x)] * cs[static_cast<std::size_t>(y)] / n;
      chi2 += square(tab[static_cast<std::size_t>(x * c + y)] - e) / e;
    }
  return std::clamp(std::sqrt(chi2 / (n * (std::min(r, c) - 1))), 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Spikes

struct SpikeEvent {
  int apex = 0;
  double height = 0.0;
  double prominence = 0.0;
  // attribution at the apex (filled by attribute_spikes)
  std::string dominant_channel;
  std::vector<double> shares;  // state, control, disturbance, additive, residual
  int regime = -1;
  std::vector<std::string> drivers;  // top driver per channel: state, control, disturbance
};

inline const std::vector<std::string>& channel_names() {
  static const std::vector<std::string> n{"state", "control", "disturbance", "additive", "residual"};
  return n;
}

/// Local maxima (first index of a plateau) with prominence >= `prominence`;
/// among peaks closer than `min_sep`, the higher one is kept (earlier on ties).
inline std::vector<SpikeEvent> detect_spikes(const std::vector<double>& x, double prominence, int min_sep) {
  const int n = static_cast<int>(x.size());
  std::vector<SpikeEvent> cand;
  for (int i = 1; i + 1 < n; ++i) {
    if (!(x[static_cast<std::size_t>(i)] > x[static_cast<std::size_t>(i - 1)])) continue;
    int j = i;
    while (j + 1 < n && x[static_cast<std::size_t>(j + 1)] == x[static_cast<std::size_t>(i)]) ++j;
    if (j + 1 >= n || !(x[static_cast<std::size_t>(j + 1)] < x[static_cast<std::size_t>(i)])) continue;
    const double h = x[static_cast<std::size_t>(i)];
    double lmin = h, rmin = h;
    for (int l = i - 1; l >= 0 && x[static_cast<std::size_t>(l)] <= h; --l) lmin = std::min(lmin, x[static_cast<std::size_t>(l)]);
    for (int r = j + 1; r < n && x[static_cast<std::size_t>(r)] <= h; ++r) rmin = std::min(rmin, x[static_cast<std::size_t>(r)]);
    // a side that meets a higher point only counts up to it; a side that runs
    // off the end of the series uses its minimum
    SpikeEvent e;
    e.apex = i;
    e.height = h;
    e.prominence = h - std::max(lmin, rmin);
    if (e.prominence >= prominence) cand.push_back(e);
  }
  std::vector<std::size_t> order(cand.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return cand[a].height > cand[b].height; });
  std::vector<SpikeEvent> kept;
  for (auto i : order) {
    bool ok = true;
    for (const auto& k : kept)
      if (std::abs(k.apex - cand[i].apex) < min_sep) ok = false;
    if (ok) kept.push_back(cand[i]);
  }
  std::sort(kept.begin(), kept.end(), [](const SpikeEvent& a, const SpikeEvent& b) { return a.apex < b.apex; });
  return kept;
}

/// Default rule: prominence 0.5 standard deviations, 30-step separation.
inline std::vector<SpikeEvent> detect_spikes(const std::vector<double>& x) {
  const double m = std::accumulate(x.begin(), x.end(), 0.0) / std::max<std::size_t>(1, x.size());
  double v = 0.0;
  for (double a : x) v += (a - m) * (a - m);
  return detect_spikes(x, 0.5 * std::sqrt(v / std::max<std::size_t>(1, x.size())), 30);
}

/// Channel shares, dominant channel, occupied regime and named drivers at
/// each spike apex of a trajectory.
inline void attribute_spikes(const ModelParams& mp, const Trajectory& tr, std::vector<SpikeEvent>& spikes) {
  for (auto& s : spikes) {
    const auto t = static_cast<std::size_t>(s.apex);
    s.shares = channel_shares(tr, s.apex);
    s.dominant_channel = channel_names()[static_cast<std::size_t>(std::max_element(s.shares.begin(), s.shares.end()) - s.shares.begin())];
    s.regime = tr.regime_at(s.apex);
    const auto M = regime_matrices(mp, s.regime, tr.gamma[t]);
    s.drivers = {attribute(M.A, tr.z[t], "state", [&](int j) { return latent_name(mp, j); }).top_driver,
                 attribute(M.B, tr.u_std[t], "control", [&](int j) { return input_name(mp.names.controls, "u", j); }).top_driver,
                 attribute(M.E, tr.w_std[t], "disturbance", [&](int j) { return input_name(mp.names.disturbances, "w", j); }).top_driver};
  }
}

// ---------------------------------------------------------------------------
// Causal Isolation Index

/// Centered uniform moving average; the window is truncated at the ends.
inline std::vector<double> smooth_uniform(const std::vector<double>& x, int width) {
  const int n = static_cast<int>(x.size()), h = width / 2;
  std::vector<double> out(x.size());
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    int c = 0;
    for (int j = std::max(0, i - h); j <= std::min(n - 1, i + (width - 1 - h)); ++j, ++c) s += x[static_cast<std::size_t>(j)];
    out[static_cast<std::size_t>(i)] = s / c;
  }
  return out;
}

struct CIISeries {
  std::vector<double> cii;
  std::vector<std::uint8_t> zero_normalizer;  // CII set to 0 at these steps
  std::vector<std::uint8_t> coupled;          // per spike
  std::vector<int> lead_time;                 // per spike; -1 when isolated
};

/// Upstream-coupling index of `target`. yhat is T x n_obs predicted means
/// (row-major), probs T x K gate probabilities, W the per-regime coupling
/// matrices (rows/cols over at least the observed coordinates).
///   W_eff(t)[j] = sum_k p(t,k) W_k[target, j]
///   CII(t) = sum_{j != target} W_eff(t)[j] |dy_j(t)| / sum_{j != target} W_eff(t)[j]
/// with the predicted series smoothed before differencing and CII smoothed
/// after.
inline CIISeries causal_isolation_index(const std::vector<double>& yhat, int n_obs, const std::vector<std::vector<double>>& probs,
                                        const std::vector<Matrix>& W, int target, int smooth = 5) {
  const int T = static_cast<int>(probs.size());
  if (static_cast<int>(yhat.size()) != T * n_obs) throw ShapeError("predicted series and gate sequence differ in length");
  if (target < 0 || target >= n_obs) throw ShapeError("CII target out of range");
  std::vector<std::vector<double>> dy(static_cast<std::size_t>(n_obs), std::vector<double>(static_cast<std::size_t>(T), 0.0));
  for (int j = 0; j < n_obs; ++j) {
    std::vector<double> s(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t) s[static_cast<std::size_t>(t)] = yhat[static_cast<std::size_t>(t * n_obs + j)];
    s = smooth_uniform(s, smooth);
    for (int t = 1; t < T; ++t) dy[static_cast<std::size_t>(j)][static_cast<std::size_t>(t)] = s[static_cast<std::size_t>(t)] - s[static_cast<std::size_t>(t - 1)];
  }
  CIISeries out;
  out.cii.assign(static_cast<std::size_t>(T), 0.0);
  out.zero_normalizer.assign(static_cast<std::size_t>(T), 0);
  for (int t = 0; t < T; ++t) {
    double num = 0.0, den = 0.0;
    for (int j = 0; j < n_obs; ++j) {
      if (j == target) continue;
      double w = 0.0;
      for (std::size_t k = 0; k < W.size(); ++k) w += probs[static_cast<std::size_t>(t)][k] * W[k](target, j);
      num += w * std::fabs(dy[static_cast<std::size_t>(j)][static_cast<std::size_t>(t)]);
      den += w;
    }
    if (den > 0.0) out.cii[static_cast<std::size_t>(t)] = num / den;
    else out.zero_normalizer[static_cast<std::size_t>(t)] = 1;
  }
  out.cii = smooth_uniform(out.cii, smooth);
  return out;
}

/// A spike is coupled iff the z-scored CII exceeds 1 anywhere in the
/// `lookback` steps before its apex; lead time runs from the first
/// exceedance to the apex.
inline void classify_spikes(CIISeries& c, const std::vector<SpikeEvent>& spikes, int lookback = 60) {
  const double n = static_cast<double>(c.cii.size());
  const double m = std::accumulate(c.cii.begin(), c.cii.end(), 0.0) / std::max(1.0, n);
  double v = 0.0;
  for (double x : c.cii) v += (x - m) * (x - m);
  const double sd = std::sqrt(v / std::max(1.0, n));
  c.coupled.clear();
  c.lead_time.clear();
  for (const auto& s : spikes) {
    int first = -1;
    if (sd > 0.0)
      for (int t = std::max(0, s.apex - lookback); t < s.apex; ++t)
        if ((c.cii[static_cast<std::size_t>(t)] - m) / sd > 1.0) {
          first = t;
          break;
        }
    c.coupled.push_back(first >= 0);
    c.lead_time.push_back(first >= 0 ? s.apex - first : -1);
  }
}

inline CIISeries causal_isolation_index(const Trajectory& tr, const std::vector<Matrix>& W, int target,
                                        const std::vector<SpikeEvent>& spikes = {}, int smooth = 5, int lookback = 60) {
  auto c = causal_isolation_index(tr.mean, tr.n_obs, tr.probs, W, target, smooth);
  classify_spikes(c, spikes, lookback);
  return c;
}

}  // namespace ccssix
