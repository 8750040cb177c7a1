// Ground-truth generators: a two-regime switching LPV system with a known
// scheduling law, and a reduced four-state nitrification/denitrification
// plant with a low-oxygen nitrous-oxide pathway, plus a labelled scenario
// library built on the plant.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ccssix/series.hpp"

namespace ccssix {

// ---------------------------------------------------------------------------
// Switching LPV system
//
//   dx = -(a + a_s s) x + b(s) u,   b(s) = s * (s >= 0 ? g_pos : g_neg)
//   ds = -r s + r w
//   z_{t+1} = z_t + dt * (dx, ds)
//
// The regime is the sign of the scheduling state s.

struct LpvSystem {
  double a = 0.5;
  double a_s = 0.3;
  double gain_pos = 2.0;
  double gain_neg = 0.5;
  double relax = 0.1;
  double noise = 0.02;
  double missing = 0.05;
  double p_long_dt = 0.15;
  double long_dt = 2.0;
  double u_segment = 5.0;   // mean length of piecewise-constant control segments
  double w_segment = 20.0;  // same for the disturbance
  double w_range = 1.5;
};

inline int lpv_regime(double s) { return s >= 0.0 ? 0 : 1; }

inline std::array<double, 2> lpv_step(const LpvSystem& sys, const std::array<double, 2>& z, double u, double w,
                                      double dt) {
  const double x = z[0], s = z[1];
  const double b = s * (s >= 0.0 ? sys.gain_pos : sys.gain_neg);
  const double dx = -(sys.a + sys.a_s * s) * x + b * u;
  const double ds = -sys.relax * s + sys.relax * w;
  return {x + dt * dx, s + dt * ds};
}

/// Noise-free states after each scenario step, starting from z0.
inline std::vector<std::array<double, 2>> simulate_truth(const LpvSystem& sys, std::array<double, 2> z0,
                                                        const ScenarioInputs& in) {
  if (in.n_u != 1 || in.n_w != 1) throw ShapeError("the LPV system takes one control and one disturbance");
  in.validate();
  std::vector<std::array<double, 2>> out;
  out.reserve(in.horizon());
  for (std::size_t t = 0; t < in.horizon(); ++t) {
    z0 = lpv_step(sys, z0, in.u[t], in.w[t], in.dt[t]);
    out.push_back(z0);
  }
  return out;
}

/// Piecewise-constant uniform levels with geometric segment lengths.
inline std::vector<double> piecewise_levels(std::size_t n, double mean_len, double lo, double hi, std::mt19937_64& rng) {
  std::geometric_distribution<int> len(1.0 / mean_len);
  std::uniform_real_distribution<double> level(lo, hi);
  std::vector<double> v;
  v.reserve(n);
  while (v.size() < n) {
    const double x = level(rng);
    const int l = 1 + len(rng);
    for (int i = 0; i < l && v.size() < n; ++i) v.push_back(x);
  }
  return v;
}

/// Observed LPV series with irregular intervals, noise and missing entries.
inline SeriesBlock generate_lpv_series(const LpvSystem& sys, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto u = piecewise_levels(n, sys.u_segment, -1.0, 1.0, rng);
  const auto w = piecewise_levels(n, sys.w_segment, -sys.w_range, sys.w_range, rng);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, sys.noise);
  SeriesBlock b(2, 1, 1, n);
  std::array<double, 2> z{0.0, 0.0};
  for (std::size_t t = 0; t < n; ++t) {
    b.dt[t] = unif(rng) < sys.p_long_dt ? sys.long_dt : 1.0;
    b.u[t] = u[t];
    b.w[t] = w[t];
    if (t > 0) z = lpv_step(sys, z, u[t], w[t], b.dt[t]);
    for (int i = 0; i < 2; ++i) {
      b.y(t, i) = z[static_cast<std::size_t>(i)] + noise(rng);
      b.m(t, i) = unif(rng) >= sys.missing;
    }
  }
  return b;
}

// ---------------------------------------------------------------------------
// Reduced plant
//
// States: ammonium-like NH, nitrate-like NO, nitrous-oxide-like N2O and
// dissolved oxygen DO (mg/L). Controls: DO set-point and carbon dosing.
// Disturbances: influent load factor and temperature (degC). Time in minutes.

struct PlantParams {
  double D = 1.0 / 240.0;  // dilution rate
  double nh_in = 6.0;
  double mu_n = 0.035, K_nh = 0.8, K_o = 0.4;
  double mu_d = 0.02, K_no = 1.0, K_oh = 0.25;
  double y1 = 0.25, y2 = 0.25, K_i = 0.35;  // N2O yields, oxygen inhibition
  double k_strip = 0.03;
  double tau_do = 5.0, c_o = 1.5;
  double theta = 1.06;
  double dt = 2.0;    // sampling interval, minutes
  int substeps = 10;  // RK4 steps per sampling interval
  double baseline_setpoint = 2.0;
  double baseline_dose = 1.0;
};

using PlantState = std::array<double, 4>;
inline const std::vector<std::string> kPlantObs{"NH4", "NO3", "N2O", "DO"};
inline const std::vector<std::string> kPlantControls{"DO_setpoint", "dosing"};
inline const std::vector<std::string> kPlantDisturbances{"load", "temperature"};
inline constexpr int kPlantN2O = 2;

inline PlantState plant_rate(const PlantParams& p, const PlantState& x, double sp, double dose, double load, double T) {
  const double nh = std::max(x[0], 0.0), no = std::max(x[1], 0.0), n2o = std::max(x[2], 0.0), o = std::max(x[3], 0.0);
  const double th = std::pow(p.theta, T - 15.0);
  const double rn = p.mu_n * th * nh / (p.K_nh + nh) * o / (p.K_o + o);
  const double rd = p.mu_d * dose * th * no / (p.K_no + no) * p.K_oh / (p.K_oh + o);
  const double inhib = p.K_i / (p.K_i + o);
  return {p.D * (load * p.nh_in - nh) - rn,
          rn - rd - p.D * no,
          p.y1 * rn * inhib + p.y2 * rd * inhib - p.k_strip * (0.1 + sp) * n2o - p.D * n2o,
          (sp - o) / p.tau_do - p.c_o * rn};
}

/// One sampling interval of fixed-step RK4; states are clamped at zero.
inline PlantState plant_step(const PlantParams& p, PlantState x, double sp, double dose, double load, double T,
                             int substeps = -1) {
  const int n = substeps > 0 ? substeps : p.substeps;
  const double h = p.dt / n;
  auto add = [](const PlantState& a, const PlantState& b, double s) {
    return PlantState{a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2], a[3] + s * b[3]};
  };
  for (int i = 0; i < n; ++i) {
    const auto k1 = plant_rate(p, x, sp, dose, load, T);
    const auto k2 = plant_rate(p, add(x, k1, h / 2), sp, dose, load, T);
    const auto k3 = plant_rate(p, add(x, k2, h / 2), sp, dose, load, T);
    const auto k4 = plant_rate(p, add(x, k3, h), sp, dose, load, T);
    for (int j = 0; j < 4; ++j) {
      const auto jj = static_cast<std::size_t>(j);
      x[jj] = std::max(0.0, x[jj] + h / 6.0 * (k1[jj] + 2 * k2[jj] + 2 * k3[jj] + k4[jj]));
    }
  }
  return x;
}

/// States after each step of `in` (controls and disturbances in raw units).
inline std::vector<PlantState> simulate_plant(const PlantParams& p, PlantState x, const ScenarioInputs& in,
                                              int substeps = -1) {
  if (in.n_u != 2 || in.n_w != 2) throw ShapeError("the plant takes two controls and two disturbances");
  std::vector<PlantState> out;
  out.reserve(in.horizon());
  for (std::size_t t = 0; t < in.horizon(); ++t) {
    x = plant_step(p, x, in.uc(t, 0), in.uc(t, 1), in.wd(t, 0), in.wd(t, 1), substeps);
    out.push_back(x);
  }
  return out;
}

/// Long-run state at constant inputs.
inline PlantState plant_steady_state(const PlantParams& p, double load = 1.0, double T = 15.0) {
  PlantState x{1.0, 5.0, 0.02, 2.0};
  for (int i = 0; i < 3000; ++i) x = plant_step(p, x, p.baseline_setpoint, p.baseline_dose, load, T);
  return x;
}

struct PlantNoise {
  double relative = 0.01;  // NH4, NO3, DO
  double n2o = 3e-4;       // absolute
  double missing = 0.03;
  double hurdle = 0.001;   // readings below are reported as exact zero
};

inline void observe_plant(const PlantState& x, SeriesBlock& b, std::size_t t, const PlantNoise& nz, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int i = 0; i < 4; ++i) {
    const double v = x[static_cast<std::size_t>(i)];
    double y = i == kPlantN2O ? v + nz.n2o * n(rng) : v * (1.0 + nz.relative * n(rng));
    y = std::max(0.0, y);
    if (i == kPlantN2O && y < nz.hurdle) y = 0.0;
    b.y(t, i) = y;
    b.m(t, i) = unif(rng) >= nz.missing;
  }
}

/// Plant operation with diurnal load, drifting temperature and random
/// set-point excursions (cuts and mild boosts), observed every sampling
/// interval.
struct OperationProfile {
  double p_baseline = 0.5;  // share of set-point segments at the baseline
  double p_cut = 0.4;       // share of cuts; the rest are mild boosts
  double min_cut = 0.2, max_cut = 1.7;
  double max_boost = 0.4;
  double mean_segment = 20.0;
  double p_dose_change = 0.15;
  double yield_spread = 0.35;  // log-sd of the latent denitrifier N2O yield, redrawn with the base load
  PlantNoise noise;
};

inline SeriesBlock generate_plant_series(const PlantParams& p, std::size_t n, std::uint64_t seed,
                                         const OperationProfile& op = {}) {
  const PlantNoise& nz = op.noise;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::geometric_distribution<int> seg_len(1.0 / op.mean_segment);
  SeriesBlock b(4, 2, 2, n);
  double base_load = 1.0, temp = 15.0;
  PlantParams q = p;
  std::vector<double> sp, dose;
  while (sp.size() < n) {
    const double r = unif(rng);
    const double level = r < op.p_baseline ? p.baseline_setpoint
                         : r < op.p_baseline + op.p_cut
                             ? p.baseline_setpoint - op.min_cut - (op.max_cut - op.min_cut) * unif(rng)
                             : p.baseline_setpoint + op.max_boost * unif(rng);
    const double d = unif(rng) >= op.p_dose_change ? p.baseline_dose : 0.8 + 0.4 * unif(rng);
    const int l = 2 + seg_len(rng);
    for (int i = 0; i < l && sp.size() < n; ++i) {
      sp.push_back(level);
      dose.push_back(d);
    }
  }
  PlantState x = plant_steady_state(p);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (std::size_t t = 0; t < n; ++t) {
    if (t % 300 == 0) {
      base_load = 0.8 + 0.4 * unif(rng);
      q.y2 = p.y2 * std::exp(op.yield_spread * gauss(rng));
    }
    temp = std::clamp(temp + 0.05 * gauss(rng), 12.0, 18.0);
    const double load = base_load * (1.0 + 0.15 * std::sin(2.0 * M_PI * static_cast<double>(t) * p.dt / 1440.0));
    b.uc(t, 0) = sp[t];
    b.uc(t, 1) = dose[t];
    b.wd(t, 0) = load;
    b.wd(t, 1) = temp;
    b.dt[t] = p.dt;
    if (t > 0) x = plant_step(q, x, sp[t], dose[t], load, temp);
    observe_plant(x, b, t, nz, rng);
  }
  return b;
}

// ---------------------------------------------------------------------------
// Scenario library

/// One planned intervention on top of baseline operation.
struct InterventionSpec {
  double depth = 0.0;    // set-point reduction, mg/L (negative = boost)
  int start = 1;         // first horizon step at the reduced set-point
  int duration = 0;      // steps at the reduced set-point
  double base_load = 1.0;
  double temperature = 15.0;
  double load_step = 0.0;  // additive load change ...
  int load_step_at = -1;   // ... from this horizon step on
  double n2o_yield = 1.0;  // latent multiplier on the denitrifier N2O yield
  std::uint64_t seed = 0;  // observation noise of the history
};

struct OracleScenario {
  Scenario scenario;
  InterventionSpec spec;
  std::vector<PlantState> oracle;  // true states over the horizon
  double peak = 0.0;               // oracle peak of the safety target
  bool safe = true;
  double energy = 0.0;             // time integral of the DO set-point
  double savings = 0.0;            // percent versus the baseline set-point
};

struct LibraryConfig {
  int horizon = 16;
  int history = 48;
  int warmup = 240;
  double tau_headroom = 1.3;
  double target_lo = 0.9, target_hi = 1.1;  // nominal peak range of library candidates, x tau
  PlantNoise noise;
};

namespace detail {

inline ScenarioInputs plant_horizon_inputs(const PlantParams& p, const InterventionSpec& s, int H, double t_offset) {
  ScenarioInputs in;
  in.n_u = 2;
  in.n_w = 2;
  for (int t = 0; t < H; ++t) {
    const bool active = t >= s.start && t < s.start + s.duration;
    in.u.push_back(active ? p.baseline_setpoint - s.depth : p.baseline_setpoint);
    in.u.push_back(p.baseline_dose);
    const double diurnal = 1.0 + 0.15 * std::sin(2.0 * M_PI * (t_offset + t) * p.dt / 1440.0);
    double load = s.base_load * diurnal;
    if (s.load_step_at >= 0 && t >= s.load_step_at) load += s.load_step;
    in.w.push_back(load);
    in.w.push_back(s.temperature);
    in.dt.push_back(p.dt);
  }
  return in;
}

}  // namespace detail

namespace detail {

inline PlantParams with_yield(const PlantParams& p, double n2o_yield) {
  PlantParams q = p;
  q.y2 *= n2o_yield;
  return q;
}

/// Baseline-operation history under the intervention's operating condition; returns the true
/// state at its end.
inline PlantState plant_history(const PlantParams& q, const InterventionSpec& spec, const LibraryConfig& cfg,
                                SeriesBlock* history) {
  std::mt19937_64 rng(spec.seed);
  const double t_hist0 = static_cast<double>(cfg.warmup);
  PlantState x = plant_steady_state(q, spec.base_load, spec.temperature);
  auto load_at = [&](double t) { return spec.base_load * (1.0 + 0.15 * std::sin(2.0 * M_PI * t * q.dt / 1440.0)); };
  for (int t = 0; t < cfg.warmup; ++t)
    x = plant_step(q, x, q.baseline_setpoint, q.baseline_dose, load_at(t), spec.temperature);
  for (int t = 0; t < cfg.history; ++t) {
    const auto tt = static_cast<std::size_t>(t);
    const double load = load_at(t_hist0 + t);
    x = plant_step(q, x, q.baseline_setpoint, q.baseline_dose, load, spec.temperature);
    if (history == nullptr) continue;
    history->uc(tt, 0) = q.baseline_setpoint;
    history->uc(tt, 1) = q.baseline_dose;
    history->wd(tt, 0) = load;
    history->wd(tt, 1) = spec.temperature;
    history->dt[tt] = q.dt;
    observe_plant(x, *history, tt, cfg.noise, rng);
  }
  return x;
}

inline double peak_n2o(const std::vector<PlantState>& traj) {
  double m = 0.0;
  for (const auto& s : traj) m = std::max(m, s[kPlantN2O]);
  return m;
}

}  // namespace detail

/// Builds the scenario (baseline-operation history, planned horizon) and
/// its oracle outcome. `tau` is the safety threshold on N2O.
inline OracleScenario make_plant_scenario(const PlantParams& p, const InterventionSpec& spec, double tau,
                                          const LibraryConfig& cfg = {}, const std::string& id = "") {
  const PlantParams q = detail::with_yield(p, spec.n2o_yield);
  OracleScenario os;
  os.spec = spec;
  auto& sc = os.scenario;
  sc.id = id;
  sc.tau = tau;
  sc.target = kPlantN2O;
  sc.history = SeriesBlock(4, 2, 2, static_cast<std::size_t>(cfg.history));
  const PlantState x = detail::plant_history(q, spec, cfg, &sc.history);
  sc.inputs = detail::plant_horizon_inputs(p, spec, cfg.horizon, static_cast<double>(cfg.warmup + cfg.history));
  os.oracle = simulate_plant(q, x, sc.inputs);
  os.peak = detail::peak_n2o(os.oracle);
  os.safe = os.peak < tau;
  double base = 0.0;
  for (int t = 0; t < cfg.horizon; ++t) {
    os.energy += sc.inputs.uc(static_cast<std::size_t>(t), 0) * p.dt;
    base += p.baseline_setpoint * p.dt;
  }
  os.savings = 100.0 * (base - os.energy) / base;
  return os;
}

/// Oracle N2O peak of the zero-intervention counterpart of `spec`.
inline double baseline_peak(const PlantParams& p, InterventionSpec spec, const LibraryConfig& cfg = {}) {
  spec.depth = 0.0;
  spec.duration = 0;
  return make_plant_scenario(p, spec, 0.0, cfg).peak;
}

inline double percentile(std::vector<double> v, double q) {
  if (v.empty()) throw std::invalid_argument("percentile of an empty sample");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto i = static_cast<std::size_t>(std::floor(pos));
  const double f = pos - static_cast<double>(i);
  return i + 1 < v.size() ? v[i] * (1.0 - f) + v[i + 1] * f : v[i];
}

inline InterventionSpec random_spec(std::mt19937_64& rng, int H) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  InterventionSpec s;
  s.depth = 1.7 * unif(rng);
  s.start = 1 + static_cast<int>(unif(rng) * 13.0);
  s.duration = 2 + static_cast<int>(unif(rng) * 15.0);
  s.base_load = 0.8 + 0.4 * unif(rng);
  s.temperature = 12.0 + 6.0 * unif(rng);
  if (unif(rng) < 0.3) {
    s.load_step = 0.1 + 0.2 * unif(rng);
    s.load_step_at = 1 + static_cast<int>(unif(rng) * (H - 1));
  }
  s.n2o_yield = std::exp(0.35 * std::normal_distribution<double>(0.0, 1.0)(rng));
  s.seed = rng();
  return s;
}

struct Library {
  double tau = 0.0;
  std::vector<OracleScenario> scenarios;
};

/// Threshold: `tau_headroom` times the 90th percentile of baseline oracle
/// peaks over `n` random operating conditions.
inline double library_tau(const PlantParams& p, std::uint64_t seed, int n = 200, const LibraryConfig& cfg = {}) {
  std::mt19937_64 rng(seed ^ 0x5bd1e995ULL);
  std::vector<double> peaks;
  for (int i = 0; i < n; ++i) peaks.push_back(baseline_peak(p, random_spec(rng, cfg.horizon), cfg));
  return cfg.tau_headroom * percentile(peaks, 0.90);
}

/// Deepest cut (bisection over [0, max_depth]) whose nominal-yield oracle
/// peak stays at `target`; monotone because deeper cuts raise N2O.
inline double nominal_depth_for(const PlantParams& p, InterventionSpec s, double target, double max_depth,
                                const LibraryConfig& cfg = {}) {
  const PlantState x0 = detail::plant_history(p, s, cfg, nullptr);
  auto peak = [&](double d) {
    s.depth = d;
    const auto in = detail::plant_horizon_inputs(p, s, cfg.horizon, static_cast<double>(cfg.warmup + cfg.history));
    return detail::peak_n2o(simulate_plant(p, x0, in));
  };
  if (peak(0.0) >= target) return 0.0;
  if (peak(max_depth) <= target) return max_depth;
  double lo = 0.0, hi = max_depth;
  for (int i = 0; i < 24; ++i) {
    const double mid = 0.5 * (lo + hi);
    (peak(mid) <= target ? lo : hi) = mid;
  }
  return lo;
}

/// Low-DO library of energy-saving candidates: random timing, duration and
/// operating conditions (some with an influent load step), with each cut made
/// as deep as the nominal plant allows for a peak of U(target_lo, target_hi)
/// x tau. The latent N2O yield of each scenario then decides its true label.
inline Library generate_low_do_library(const PlantParams& p, int n, std::uint64_t seed, const LibraryConfig& cfg = {}) {
  Library lib;
  lib.tau = library_tau(p, seed, 200, cfg);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int i = 0; i < n; ++i) {
    auto s = random_spec(rng, cfg.horizon);
    const double target = lib.tau * (cfg.target_lo + (cfg.target_hi - cfg.target_lo) * unif(rng));
    s.depth = nominal_depth_for(p, s, target, 1.7, cfg);
    lib.scenarios.push_back(make_plant_scenario(p, s, lib.tau, cfg, "lib-" + std::to_string(i)));
  }
  return lib;
}

struct FailureModeSets {
  std::vector<OracleScenario> unsafe_supported;  // in-distribution; mild-safe and deep-unsafe cuts
  std::vector<OracleScenario> safe_unsupported;  // benign but novel set-point boosts
};

inline FailureModeSets plant_failure_mode_sets(const PlantParams& p, double tau, std::uint64_t seed, int n_each = 20,
                                               const LibraryConfig& cfg = {}) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  FailureModeSets f;
  auto conditions = [&](InterventionSpec& s) {
    s.base_load = 0.9 + 0.2 * unif(rng);
    s.temperature = 14.0 + 2.0 * unif(rng);
    s.seed = rng();
  };
  for (int i = 0; i < n_each; ++i) {
    InterventionSpec s;
    if (i % 2 == 0) {  // mild
      s.depth = 0.1 + 0.3 * unif(rng);
      s.start = 3 + static_cast<int>(unif(rng) * 6.0);
      s.duration = 4 + static_cast<int>(unif(rng) * 5.0);
    } else {  // deep, early and long
      s.depth = 1.5 + 0.2 * unif(rng);
      s.start = 1 + static_cast<int>(unif(rng) * 3.0);
      s.duration = cfg.horizon;
    }
    conditions(s);
    f.unsafe_supported.push_back(make_plant_scenario(p, s, tau, cfg, "us-" + std::to_string(i)));
  }
  for (int i = 0; i < n_each; ++i) {
    InterventionSpec s;
    s.depth = -(0.6 + 1.4 * unif(rng));
    s.start = 1 + static_cast<int>(unif(rng) * 6.0);
    s.duration = cfg.horizon;
    conditions(s);
    f.safe_unsupported.push_back(make_plant_scenario(p, s, tau, cfg, "su-" + std::to_string(i)));
  }
  return f;
}

}  // namespace ccssix
