// Masked-likelihood fitting with a semigroup consistency penalty, Adam with
// gradient-norm clipping, a rollout-length curriculum and best-so-far
// checkpointing.
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <iostream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ccssix/rollout.hpp"

namespace ccssix {

struct Range {
  std::size_t begin = 0, end = 0;
  std::size_t size() const { return end - begin; }
};

/// Chronological, disjoint train / calibration / evaluation ranges.
struct SplitSpec {
  Range train, calibration, evaluation;

  void validate(std::size_t n) const {
    auto ok = [](const Range& r) { return r.begin <= r.end; };
    if (!ok(train) || !ok(calibration) || !ok(evaluation)) throw ConfigError("split ranges must have begin <= end");
    if (train.end > calibration.begin || calibration.end > evaluation.begin || evaluation.end > n)
      throw ConfigError("split ranges must be ordered, disjoint and inside the series");
  }

  static SplitSpec fractions(std::size_t n, double train_frac, double cal_frac) {
    const auto a = static_cast<std::size_t>(train_frac * static_cast<double>(n));
    const auto b = static_cast<std::size_t>((train_frac + cal_frac) * static_cast<double>(n));
    return SplitSpec{{0, a}, {a, b}, {b, n}};
  }
};

struct FitConfig {
  std::vector<std::uint64_t> seeds{1, 5, 7, 11, 19, 23, 31, 42, 47, 53};
  Variant variant = Variant::Adaptive;
  int history_length = 32;
  int window_length = 16;      // evaluation horizon; the curriculum ends here
  int curriculum_start = 8;
  int window_stride = 1;
  int batch_size = 16;
  int epochs = 30;
  double learning_rate = 1e-2;
  double clip_norm = 1.0;
  double semigroup_weight = 1e-3;
  int semigroup_stride = 4;
  double max_wall_seconds = 540.0;
  int max_windows_per_epoch = 0;  // 0 = all training windows
  ModelDims dims;                 // only K, R, n_slack and n_knots are read
  ModelConfig model;
  VariableNames names;
  std::string log_path;           // line-delimited fit log; empty = none

  void validate() const {
    if (seeds.empty()) throw ConfigError("at least one seed is required");
    if (semigroup_weight < 0.0) throw ConfigError("semigroup weight must be nonnegative");
    if (window_length < 1 || history_length < 1 || batch_size < 1 || epochs < 0)
      throw ConfigError("window, history, batch and epoch counts must be positive");
  }
};

/// A training window: encoded history plus a horizon of targets.
struct Window {
  EncoderState enc;
  StdInputs inputs;
  std::vector<double> y;            // horizon x n_obs, standardized
  std::vector<std::uint8_t> mask;
  std::vector<std::uint8_t> zero;   // raw value under the hurdle threshold
  int H = 0;
};

inline Window make_window(const ModelParams& mp, const SeriesBlock& data, std::size_t start, int history, int H) {
  if (start < static_cast<std::size_t>(history) || start + static_cast<std::size_t>(H) > data.length())
    throw ShapeError("window does not fit inside the series");
  Window win;
  win.H = H;
  win.enc = encode_history(mp, data.slice(start - static_cast<std::size_t>(history), start));
  const SeriesBlock fut = data.slice(start, start + static_cast<std::size_t>(H));
  win.inputs = standardize_inputs(mp, inputs_of(fut));
  const int no = mp.dims.n_obs;
  win.y.assign(static_cast<std::size_t>(H * no), 0.0);
  win.mask.assign(win.y.size(), 0);
  win.zero.assign(win.y.size(), 0);
  for (int t = 0; t < H; ++t)
    for (int i = 0; i < no; ++i) {
      const auto k = static_cast<std::size_t>(t * no + i);
      win.mask[k] = fut.m(static_cast<std::size_t>(t), i);
      if (!win.mask[k]) continue;
      const double raw = fut.y(static_cast<std::size_t>(t), i);
      win.y[k] = mp.obs_scale.to_std(static_cast<std::size_t>(i), raw);
      win.zero[k] = mp.config.hurdle[static_cast<std::size_t>(i)] && raw < mp.config.hurdle_threshold;
    }
  return win;
}

inline Window truncate(const Window& w, int H) {
  if (H >= w.H) return w;
  Window t = w;
  t.H = H;
  const auto no = w.y.size() / static_cast<std::size_t>(w.H);
  t.y.resize(static_cast<std::size_t>(H) * no);
  t.mask.resize(t.y.size());
  t.zero.resize(t.y.size());
  t.inputs.u.resize(static_cast<std::size_t>(H * w.inputs.n_u));
  t.inputs.w.resize(static_cast<std::size_t>(H * w.inputs.n_w));
  t.inputs.dt.resize(static_cast<std::size_t>(H));
  return t;
}

struct LossParts {
  double nll = 0.0;
  double penalty = 0.0;
  int n_observed = 0;
  bool diverged = false;
};

inline constexpr double kDivergencePenalty = 1e6;

/// Masked hurdle-Student-t NLL over the window horizon plus
/// lambda * sum ||one 2dt step - two dt steps||^2 at every `stride`-th step
/// (context and gate frozen at the step's values).
template <class T>
T window_loss(const ModelParams& mp, std::span<const T> theta, const Window& win, double lambda, int stride,
              LossParts* parts = nullptr) {
  auto seg = init_segment<T>(mp, theta, win.enc);
  const int no = mp.dims.n_obs, dz = mp.dims.dz();
  T nll = 0.0, pen = 0.0;
  int n_obs = 0;
  for (int t = 0; t < win.H; ++t) {
    const double* u = win.inputs.ut(static_cast<std::size_t>(t));
    const double* w = win.inputs.wt(static_cast<std::size_t>(t));
    const double dt = win.inputs.dt[static_cast<std::size_t>(t)];
    std::vector<T> z_before;
    if (lambda > 0.0 && stride > 0 && t % stride == 0) z_before = seg.z;
    auto r = step<T>(mp, theta, seg, u, w, dt);
    if (r.diverged) {
      if (parts) parts->diverged = true;
      return T(kDivergencePenalty);
    }
    if (!z_before.empty()) {
      // one step of 2dt versus two steps of dt from the same state
      std::vector<T> ut(u, u + mp.dims.n_u), wt(w, w + mp.dims.n_w);
      const auto d0 = mixture_update<T>(mp, theta, z_before.data(), ut.data(), wt.data(), r.gamma.data(), r.probs);
      std::vector<T> z1(static_cast<std::size_t>(dz));
      for (std::size_t i = 0; i < z1.size(); ++i) z1[i] = z_before[i] + r.g * d0.total[i];
      const auto d1 = mixture_update<T>(mp, theta, z1.data(), ut.data(), wt.data(), r.gamma.data(), r.probs);
      for (std::size_t i = 0; i < z1.size(); ++i) pen = pen + square(r.g * (d0.total[i] - d1.total[i]));
    }
    const auto e = emit_t<T>(mp, theta, seg.z.data());
    for (int i = 0; i < no; ++i) {
      const auto k = static_cast<std::size_t>(t * no + i);
      if (!win.mask[k]) continue;
      nll = nll + emission_nll<T>(e, static_cast<std::size_t>(i), mp.config.hurdle[static_cast<std::size_t>(i)], win.y[k],
                                  win.zero[k] != 0);
      ++n_obs;
    }
  }
  const T total = nll + lambda * pen;
  if (parts) {
    parts->nll = value(nll);
    parts->penalty = value(pen);
    parts->n_observed = n_obs;
  }
  if (!std::isfinite(value(total))) {
    if (parts) parts->diverged = true;
    return T(kDivergencePenalty);
  }
  return total;
}

inline double loss(const ModelParams& mp, const Window& win, double lambda, int stride = 4, LossParts* parts = nullptr) {
  return window_loss<double>(mp, std::span<const double>(mp.theta), win, lambda, stride, parts);
}

/// Loss and exact gradient (reverse mode) of sum_w loss(w) / scale.
inline double loss_and_gradient(const ModelParams& mp, std::span<const double> theta, std::span<const Window> batch,
                                double lambda, int stride, std::vector<double>& grad, double scale = 1.0) {
  thread_local ad::Tape tape;  // keeps its capacity across batches
  tape.clear();
  ad::TapeScope scope(tape);
  std::vector<ad::Var> th;
  th.reserve(theta.size());
  for (double v : theta) th.push_back(ad::Var::leaf(v));
  ad::Var total = 0.0;
  for (const auto& w : batch) total = total + window_loss<ad::Var>(mp, std::span<const ad::Var>(th), w, lambda, stride);
  total = total / scale;
  tape.backward(total.index());
  grad.assign(theta.size(), 0.0);
  for (std::size_t i = 0; i < th.size(); ++i) grad[i] = tape.adjoint(th[i].index());
  return total.value();
}

struct Adam {
  double lr = 1e-2, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  std::vector<double> m, v;
  long t = 0;

  void step(std::vector<double>& theta, const std::vector<double>& grad, const std::vector<double>& mask) {
    if (m.empty()) {
      m.assign(theta.size(), 0.0);
      v.assign(theta.size(), 0.0);
    }
    ++t;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t)), c2 = 1.0 - std::pow(b2, static_cast<double>(t));
    for (std::size_t i = 0; i < theta.size(); ++i) {
      if (mask[i] == 0.0) continue;
      m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
      v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
      theta[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
};

inline double clip_gradient(std::vector<double>& g, double max_norm) {
  double n2 = 0.0;
  for (double v : g) n2 += v * v;
  const double n = std::sqrt(n2);
  if (max_norm > 0.0 && n > max_norm)
    for (double& v : g) v *= max_norm / n;
  return n;
}

struct FitLogRecord {
  int epoch = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  double wall_time = 0.0;
  int horizon = 0;
};

inline nlohmann::json to_json(const FitLogRecord& r) {
  return {{"epoch", r.epoch}, {"loss", r.loss}, {"grad_norm", r.grad_norm}, {"wall_time", r.wall_time}, {"horizon", r.horizon}};
}

struct FitResult {
  ModelParams params;
  std::vector<FitLogRecord> log;
  bool converged = true;
  std::string warning;
};

/// Standardization statistics of the training range (observed entries only).
inline void set_scales(ModelParams& mp, const SeriesBlock& data, const Range& r) {
  auto stats = [&](int n, auto get, auto ok) {
    Standardizer s = identity_scale(n);
    for (int i = 0; i < n; ++i) {
      double sum = 0.0, sum2 = 0.0;
      int c = 0;
      for (std::size_t t = r.begin; t < r.end; ++t) {
        if (!ok(t, i)) continue;
        const double v = get(t, i);
        sum += v;
        sum2 += v * v;
        ++c;
      }
      if (c > 1) {
        const double m = sum / c;
        const double var = std::max(0.0, sum2 / c - m * m);
        s.mean[static_cast<std::size_t>(i)] = m;
        s.sd[static_cast<std::size_t>(i)] = var > 1e-12 ? std::sqrt(var) : 1.0;
      }
    }
    return s;
  };
  mp.obs_scale = stats(data.n_obs, [&](std::size_t t, int i) { return data.y(t, i); },
                       [&](std::size_t t, int i) { return data.m(t, i) != 0; });
  mp.u_scale = stats(data.n_u, [&](std::size_t t, int i) { return data.uc(t, i); }, [](std::size_t, int) { return true; });
  mp.w_scale = stats(data.n_w, [&](std::size_t t, int i) { return data.wd(t, i); }, [](std::size_t, int) { return true; });
  std::vector<double> dts(data.dt.begin() + static_cast<std::ptrdiff_t>(r.begin), data.dt.begin() + static_cast<std::ptrdiff_t>(r.end));
  if (!dts.empty()) {
    std::nth_element(dts.begin(), dts.begin() + static_cast<std::ptrdiff_t>(dts.size() / 2), dts.end());
    mp.config.dt_ref = dts[dts.size() / 2];
  }
}

/// Window start indices whose history and horizon lie inside `r`.
inline std::vector<std::size_t> window_starts(const Range& r, int history, int H, int stride) {
  std::vector<std::size_t> s;
  for (std::size_t t = r.begin + static_cast<std::size_t>(history); t + static_cast<std::size_t>(H) <= r.end;
       t += static_cast<std::size_t>(std::max(1, stride)))
    s.push_back(t);
  return s;
}

inline std::uint64_t hash_series(const SeriesBlock& b) {
  std::uint64_t h = 14695981039346656037ULL;  // FNV-1a over the raw bytes
  auto mix = [&](const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= c[i];
      h *= 1099511628211ULL;
    }
  };
  mix(b.obs.data(), b.obs.size() * sizeof(double));
  mix(b.mask.data(), b.mask.size());
  mix(b.u.data(), b.u.size() * sizeof(double));
  mix(b.w.data(), b.w.size() * sizeof(double));
  mix(b.dt.data(), b.dt.size() * sizeof(double));
  return h;
}

/// Deterministic given (data, split, cfg, seed).
inline FitResult fit(const SeriesBlock& data, const SplitSpec& split, const FitConfig& cfg, std::uint64_t seed,
                     const std::vector<bool>& hurdle = {}) {
  cfg.validate();
  split.validate(data.length());
  ModelDims dims = cfg.dims;
  dims.n_obs = data.n_obs;
  dims.n_u = data.n_u;
  dims.n_w = data.n_w;
  ModelConfig mc = cfg.model;
  mc.variant = cfg.variant;
  if (!hurdle.empty()) mc.hurdle = hurdle;
  FitResult res;
  res.params = init_params(dims, mc, seed);
  ModelParams& mp = res.params;
  set_scales(mp, data, split.train);
  mp.meta.seed = seed;
  mp.names = cfg.names;
  mp.meta.data_hash = std::to_string(hash_series(data));

  auto starts = window_starts(split.train, cfg.history_length, cfg.window_length, cfg.window_stride);
  if (starts.empty()) throw ConfigError("training range too short for one window");
  std::vector<Window> windows;
  windows.reserve(starts.size());
  for (auto s : starts) windows.push_back(make_window(mp, data, s, cfg.history_length, cfg.window_length));

  const auto mask = mp.layout.trainable_mask(mc.variant);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  Adam opt;
  opt.lr = cfg.learning_rate;
  std::vector<std::size_t> order(windows.size());
  std::iota(order.begin(), order.end(), 0);

  // curriculum: horizon doubles from curriculum_start to window_length,
  // spending an equal share of the epochs on each stage
  std::vector<int> stages;
  for (int h = std::min(cfg.curriculum_start, cfg.window_length); ; h *= 2) {
    stages.push_back(std::min(h, cfg.window_length));
    if (h >= cfg.window_length) break;
  }
  const int per_stage = std::max(1, cfg.epochs / static_cast<int>(stages.size()));

  std::ofstream log_file;
  if (!cfg.log_path.empty()) log_file.open(cfg.log_path, std::ios::app);
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<double> best = mp.theta;
  double best_loss = std::numeric_limits<double>::infinity();
  std::vector<double> grad;
  std::vector<Window> batch;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const int H = stages[static_cast<std::size_t>(std::min<int>(epoch / per_stage, static_cast<int>(stages.size()) - 1))];
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t n_use = order.size();
    if (cfg.max_windows_per_epoch > 0) n_use = std::min<std::size_t>(n_use, static_cast<std::size_t>(cfg.max_windows_per_epoch));
    double epoch_loss = 0.0, gnorm_sum = 0.0;
    int n_batches = 0;
    bool bad = false;
    for (std::size_t b = 0; b < n_use; b += static_cast<std::size_t>(cfg.batch_size)) {
      batch.clear();
      int n_observed = 0;
      for (std::size_t j = b; j < std::min(n_use, b + static_cast<std::size_t>(cfg.batch_size)); ++j) {
        batch.push_back(truncate(windows[order[j]], H));
        for (auto m : batch.back().mask) n_observed += m;
      }
      const double l = loss_and_gradient(mp, mp.theta, batch, cfg.semigroup_weight, cfg.semigroup_stride, grad,
                                         std::max(1, n_observed));
      if (!std::isfinite(l)) {
        bad = true;
        break;
      }
      for (std::size_t i = 0; i < grad.size(); ++i) grad[i] *= mask[i];
      gnorm_sum += clip_gradient(grad, cfg.clip_norm);
      opt.step(mp.theta, grad, mask);
      epoch_loss += l;
      ++n_batches;
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    FitLogRecord rec{epoch, n_batches ? epoch_loss / n_batches : std::nan(""), n_batches ? gnorm_sum / n_batches : 0.0,
                     wall, H};
    res.log.push_back(rec);
    if (log_file) log_file << to_json(rec).dump() << '\n';
    if (bad) {
      res.converged = false;
      res.warning = "non-finite loss at epoch " + std::to_string(epoch) + "; best-so-far parameters kept";
      break;
    }
    // best-so-far is only comparable at the final horizon
    if (H == cfg.window_length && rec.loss < best_loss) {
      best_loss = rec.loss;
      best = mp.theta;
    }
    if (wall > cfg.max_wall_seconds) {
      res.warning = "wall-time budget reached at epoch " + std::to_string(epoch);
      break;
    }
  }
  if (std::isfinite(best_loss)) mp.theta = best;
  mp.meta.epochs = static_cast<int>(res.log.size());
  mp.meta.final_loss = std::isfinite(best_loss) ? best_loss : (res.log.empty() ? 0.0 : res.log.back().loss);
  mp.meta.converged = res.converged;
  if (!res.warning.empty()) std::cerr << "fit: " << res.warning << '\n';
  return res;
}

struct PairedComparison {
  double mean_diff = 0.0;
  double lo = 0.0, hi = 0.0;
};

/// Mean of the within-seed differences a - b with a percentile bootstrap CI.
inline PairedComparison paired_compare(std::span<const double> a, std::span<const double> b, int n_resamples = 20000,
                                       std::uint64_t seed = 0, double conf = 0.95) {
  if (a.size() != b.size() || a.empty()) throw ShapeError("paired_compare needs equal, nonempty per-seed arrays");
  const std::size_t n = a.size();
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
  PairedComparison out;
  out.mean_diff = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(n);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::vector<double> means(static_cast<std::size_t>(n_resamples));
  for (auto& m : means) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += d[pick(rng)];
    m = s / static_cast<double>(n);
  }
  std::sort(means.begin(), means.end());
  auto pct = [&](double q) {
    const double pos = q * static_cast<double>(means.size() - 1);
    const auto i = static_cast<std::size_t>(std::floor(pos));
    const double f = pos - static_cast<double>(i);
    return i + 1 < means.size() ? means[i] * (1.0 - f) + means[i + 1] * f : means[i];
  };
  out.lo = pct((1.0 - conf) / 2.0);
  out.hi = pct(1.0 - (1.0 - conf) / 2.0);
  return out;
}

}  // namespace ccssix
