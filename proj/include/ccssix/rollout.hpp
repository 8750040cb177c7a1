// Open-loop rollout: context vector, sticky routing, regime mixing, Euler
// advance in dt / dt_ref, emission, and partition recomposition.
#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "ccssix/dynamics.hpp"
#include "ccssix/emission.hpp"
#include "ccssix/encoder.hpp"
#include "ccssix/series.hpp"

namespace ccssix {

/// Interior cuts 0 < c_1 < ... < c_{J-1} < H. Segment j covers steps
/// [c_{j-1}, c_j).
struct Partition {
  std::vector<int> cuts;

  void validate(int H) const {
    int prev = 0;
    for (int c : cuts) {
      if (c <= prev || c >= H) throw ShapeError("partition cuts must be strictly increasing inside (0, H)");
      prev = c;
    }
  }
  std::string str(int H) const {
    std::string s = "[0";
    for (int c : cuts) s += "-" + std::to_string(c);
    return s + "-" + std::to_string(H) + "]";
  }
  bool operator==(const Partition&) const = default;
};

template <class T>
struct SegmentState {
  std::vector<T> z, probs, lat_m, lat_v, fast, init_logits;
  std::vector<double> global;
  int argmax = 0;
  bool fresh = true;
};

template <class T>
int argmax_of(const std::vector<T>& v) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(v.size()); ++i)
    if (value(v[static_cast<std::size_t>(i)]) > value(v[static_cast<std::size_t>(best)])) best = i;
  return best;
}

/// (z, gate) initialisation from an encoder state.
template <class T>
SegmentState<T> init_segment(const ModelParams& mp, std::span<const T> theta, const EncoderState& enc) {
  const ModelDims& d = mp.dims;
  const auto& g = mp.layout.global();
  const int dz = d.dz(), ne = d.n_enc(), K = d.K;
  const auto feat = enc.features();
  SegmentState<T> s;
  s.z.assign(static_cast<std::size_t>(dz), T(0.0));
  s.init_logits.assign(static_cast<std::size_t>(K), T(0.0));
  for (int i = 0; i < dz; ++i) {
    T acc = theta[g.enc_bz + static_cast<std::size_t>(i)];
    for (int j = 0; j < ne; ++j) acc = acc + theta[g.enc_Wz + static_cast<std::size_t>(i * ne + j)] * feat[static_cast<std::size_t>(j)];
    s.z[static_cast<std::size_t>(i)] = acc;
  }
  for (int k = 0; k < K; ++k) {
    T acc = theta[g.enc_bg + static_cast<std::size_t>(k)];
    for (int j = 0; j < ne; ++j) acc = acc + theta[g.enc_Wg + static_cast<std::size_t>(k * ne + j)] * feat[static_cast<std::size_t>(j)];
    s.init_logits[static_cast<std::size_t>(k)] = acc;
  }
  s.probs = s.init_logits;
  softmax_inplace(s.probs);
  s.argmax = argmax_of(s.probs);
  s.lat_m = s.z;
  s.lat_v.assign(static_cast<std::size_t>(dz), T(0.0));
  s.fast.assign(static_cast<std::size_t>(dz), T(0.0));
  s.global = enc.global_summary();
  s.fresh = true;
  return s;
}

/// Gate-weighted mixture of per-regime updates (not yet scaled by dt).
template <class T>
ChannelsT<T> mixture_update(const ModelParams& mp, std::span<const T> theta, const T* z, const T* u, const T* w,
                            const T* gamma, const std::vector<T>& probs) {
  const int dz = mp.dims.dz();
  ChannelsT<T> mix(dz);
  for (int k = 0; k < mp.dims.K; ++k) {
    const auto view = regime_view<T>(mp, theta, k);
    const ChannelsT<T> c = mp.config.variant == Variant::Static ? static_update_t<T>(view, z, u, w)
                                                                 : adaptive_update_t<T>(view, z, u, w, gamma);
    const T& p = probs[static_cast<std::size_t>(k)];
    for (std::size_t i = 0; i < static_cast<std::size_t>(dz); ++i) {
      mix.state[i] = mix.state[i] + p * c.state[i];
      mix.control[i] = mix.control[i] + p * c.control[i];
      mix.disturbance[i] = mix.disturbance[i] + p * c.disturbance[i];
      mix.bias[i] = mix.bias[i] + p * c.bias[i];
      mix.additive[i] = mix.additive[i] + p * c.additive[i];
      mix.residual[i] = mix.residual[i] + p * c.residual[i];
    }
  }
  mix.sum_total();
  return mix;
}

template <class T>
struct StepResult {
  std::vector<T> gamma;    // context vector used by this step
  std::vector<T> probs;    // routed gate probabilities
  ChannelsT<T> applied;    // channels already scaled by dt / dt_ref
  double g = 1.0;
  bool diverged = false;
};

/// One rollout step in standardized input units; advances `s` in place.
template <class T>
StepResult<T> step(const ModelParams& mp, std::span<const T> theta, SegmentState<T>& s, const double* u,
                   const double* w, double dt) {
  const ModelDims& d = mp.dims;
  const int dz = d.dz(), K = d.K;
  const double a = 2.0 / (mp.config.latent_span + 1.0);
  for (std::size_t i = 0; i < static_cast<std::size_t>(dz); ++i) {
    const T diff = s.z[i] - s.lat_m[i];
    s.lat_m[i] = s.lat_m[i] + a * diff;
    s.lat_v[i] = (1.0 - a) * (s.lat_v[i] + a * diff * diff);
  }

  StepResult<T> r;
  r.g = dt / mp.config.dt_ref;
  auto& gm = r.gamma;
  gm.reserve(static_cast<std::size_t>(d.n_route()));
  for (const auto& p : s.probs) gm.push_back(p);
  for (const auto& m : s.lat_m) gm.push_back(m);
  for (const auto& v : s.lat_v) gm.push_back(sqrt(v + 1e-8));
  for (double x : s.global) gm.push_back(T(x));
  for (const auto& f : s.fast) gm.push_back(f);
  gm.push_back(T(r.g));
  gm.push_back(T(std::log1p(dt)));

  // routing features extend the context vector with this step's inputs
  std::vector<T> feat = gm;
  for (int i = 0; i < d.n_u; ++i) feat.push_back(T(u[i]));
  for (int i = 0; i < d.n_w; ++i) feat.push_back(T(w[i]));
  const auto& g = mp.layout.global();
  const int nr = d.n_route();
  std::vector<T> logits(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) {
    T acc = theta[g.gate_b + static_cast<std::size_t>(k)];
    for (int j = 0; j < nr; ++j) acc = acc + theta[g.gate_W + static_cast<std::size_t>(k * nr + j)] * feat[static_cast<std::size_t>(j)];
    logits[static_cast<std::size_t>(k)] = acc;
  }
  if (s.fresh) {
    for (int k = 0; k < K; ++k) logits[static_cast<std::size_t>(k)] = logits[static_cast<std::size_t>(k)] + s.init_logits[static_cast<std::size_t>(k)];
  } else {
    logits[static_cast<std::size_t>(s.argmax)] = logits[static_cast<std::size_t>(s.argmax)] + mp.config.kappa;
  }
  softmax_inplace(logits);
  s.probs = logits;
  s.argmax = argmax_of(s.probs);
  s.fresh = false;
  r.probs = s.probs;

  std::vector<T> ut(u, u + d.n_u), wt(w, w + d.n_w);
  r.applied = mixture_update<T>(mp, theta, s.z.data(), ut.data(), wt.data(), gm.data(), s.probs);
  for (auto* ch : {&r.applied.state, &r.applied.control, &r.applied.disturbance, &r.applied.bias,
                   &r.applied.additive, &r.applied.residual})
    for (auto& v : *ch) v = r.g * v;
  r.applied.sum_total();
  for (std::size_t i = 0; i < static_cast<std::size_t>(dz); ++i) {
    s.z[i] = s.z[i] + r.applied.total[i];
    const double zv = value(s.z[i]);
    if (!std::isfinite(zv) || std::fabs(zv) > 1e8) r.diverged = true;
  }
  s.fast = r.applied.total;
  return r;
}

/// Standardized step inputs of a scenario.
struct StdInputs {
  int n_u = 0, n_w = 0;
  std::vector<double> u, w, dt;
  const double* ut(std::size_t t) const { return u.data() + t * static_cast<std::size_t>(n_u); }
  const double* wt(std::size_t t) const { return w.data() + t * static_cast<std::size_t>(n_w); }
};

inline StdInputs standardize_inputs(const ModelParams& mp, const ScenarioInputs& in) {
  if (in.n_u != mp.dims.n_u || in.n_w != mp.dims.n_w) throw ShapeError("scenario inputs do not match the model");
  in.validate();
  StdInputs s{in.n_u, in.n_w, in.u, in.w, in.dt};
  for (std::size_t t = 0; t < in.horizon(); ++t) {
    for (int i = 0; i < in.n_u; ++i)
      s.u[t * static_cast<std::size_t>(in.n_u) + static_cast<std::size_t>(i)] = mp.u_scale.to_std(static_cast<std::size_t>(i), in.uc(t, i));
    for (int i = 0; i < in.n_w; ++i)
      s.w[t * static_cast<std::size_t>(in.n_w) + static_cast<std::size_t>(i)] = mp.w_scale.to_std(static_cast<std::size_t>(i), in.wd(t, i));
  }
  return s;
}

struct Trajectory {
  int H = 0, n_obs = 0, dz = 0, K = 0;
  Partition partition;
  std::vector<double> mean;  // H x n_obs, raw units
  std::vector<std::vector<PredictiveDistribution>> dist;
  std::vector<std::vector<double>> z;      // latent state entering each step
  std::vector<std::vector<double>> z_next;  // latent state after each step
  std::vector<std::vector<double>> gamma;
  std::vector<std::vector<double>> probs;
  std::vector<ChannelDecomposition> channels;  // applied update per step
  std::vector<std::vector<double>> u_std, w_std;
  std::vector<double> dt;
  std::vector<int> segment;
  bool diverged = false;
  int diverged_at = -1;

  double mean_at(int t, int i) const { return mean[static_cast<std::size_t>(t * n_obs + i)]; }
  std::vector<double> series(int i) const {
    std::vector<double> s(static_cast<std::size_t>(H));
    for (int t = 0; t < H; ++t) s[static_cast<std::size_t>(t)] = mean_at(t, i);
    return s;
  }
  double quantile_at(int t, int i, double q) const { return ccssix::quantile(dist[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)], q); }
  int regime_at(int t) const { return argmax_of(probs[static_cast<std::size_t>(t)]); }
};

/// Rollout from an encoded history. At each interior cut the simulated
/// prefix of the finished segment (predictive means plus its inputs) is
/// appended to the encoder as pseudo-observed context and (z, gate) are
/// re-initialised.
inline Trajectory rollout(const ModelParams& mp, const EncoderState& enc0, const ScenarioInputs& scenario,
                          const Partition& partition = {}) {
  const StdInputs in = standardize_inputs(mp, scenario);
  const int H = static_cast<int>(in.dt.size());
  partition.validate(H);
  const ModelDims& d = mp.dims;
  Trajectory tr;
  tr.H = H;
  tr.n_obs = d.n_obs;
  tr.dz = d.dz();
  tr.K = d.K;
  tr.partition = partition;
  tr.mean.assign(static_cast<std::size_t>(H * d.n_obs), std::nan(""));
  tr.dt = in.dt;

  const std::span<const double> theta(mp.theta);
  EncoderState enc = enc0;
  auto seg = init_segment<double>(mp, theta, enc);
  std::size_t next_cut = 0;
  int seg_index = 0, seg_start = 0;
  std::vector<double> row(static_cast<std::size_t>(d.n_vars()));
  const std::vector<std::uint8_t> full_mask(row.size(), 1);

  for (int t = 0; t < H; ++t) {
    if (next_cut < partition.cuts.size() && t == partition.cuts[next_cut]) {
      for (int s = seg_start; s < t; ++s) {
        for (int i = 0; i < d.n_obs; ++i)
          row[static_cast<std::size_t>(i)] = mp.obs_scale.to_std(static_cast<std::size_t>(i), tr.mean_at(s, i));
        for (int i = 0; i < d.n_u; ++i) row[static_cast<std::size_t>(d.n_obs + i)] = in.ut(static_cast<std::size_t>(s))[i];
        for (int i = 0; i < d.n_w; ++i) row[static_cast<std::size_t>(d.n_obs + d.n_u + i)] = in.wt(static_cast<std::size_t>(s))[i];
        enc.update(row, full_mask);
      }
      seg = init_segment<double>(mp, theta, enc);
      ++next_cut;
      ++seg_index;
      seg_start = t;
    }
    tr.z.push_back(seg.z);
    auto r = step<double>(mp, theta, seg, in.ut(static_cast<std::size_t>(t)), in.wt(static_cast<std::size_t>(t)),
                          in.dt[static_cast<std::size_t>(t)]);
    tr.gamma.push_back(std::move(r.gamma));
    tr.probs.push_back(std::move(r.probs));
    tr.channels.push_back(std::move(r.applied));
    tr.z_next.push_back(seg.z);
    tr.u_std.emplace_back(in.ut(static_cast<std::size_t>(t)), in.ut(static_cast<std::size_t>(t)) + d.n_u);
    tr.w_std.emplace_back(in.wt(static_cast<std::size_t>(t)), in.wt(static_cast<std::size_t>(t)) + d.n_w);
    tr.segment.push_back(seg_index);
    if (r.diverged) {
      tr.diverged = true;
      tr.diverged_at = t;
      break;
    }
    auto dist = emit(mp, seg.z);
    for (int i = 0; i < d.n_obs; ++i) tr.mean[static_cast<std::size_t>(t * d.n_obs + i)] = dist[static_cast<std::size_t>(i)].mean();
    tr.dist.push_back(std::move(dist));
  }
  return tr;
}

inline Trajectory rollout(const ModelParams& mp, const SeriesBlock& history, const ScenarioInputs& scenario,
                          const Partition& partition = {}) {
  return rollout(mp, encode_history(mp, history), scenario, partition);
}

}  // namespace ccssix
