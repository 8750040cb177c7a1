// Self-falsifying validity layer: support scoring against a calibration
// block, event-aligned partition families, partition margins / defect /
// orbit diameter, conformal calibration and the four-outcome decision.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ccssix/rollout.hpp"

namespace ccssix {

// ---------------------------------------------------------------------------
// Embeddings

namespace detail {

struct Summary {
  double mean = 0.0, sd = 0.0, last = 0.0, slope = 0.0;
};

/// Mean, population std, last value and least-squares slope per step over
/// the entries flagged in `ok`.
template <class Get, class Ok>
Summary summarize(std::size_t n, Get get, Ok ok) {
  Summary s;
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0, syy = 0.0;
  int c = 0;
  for (std::size_t t = 0; t < n; ++t) {
    if (!ok(t)) continue;
    const double x = static_cast<double>(t), y = get(t);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    syy += y * y;
    s.last = y;
    ++c;
  }
  if (c == 0) return s;
  s.mean = sy / c;
  s.sd = std::sqrt(std::max(0.0, syy / c - s.mean * s.mean));
  const double den = c * sxx - sx * sx;
  s.slope = den > 0.0 ? (c * sxy - sx * sy) / den : 0.0;
  return s;
}

}  // namespace detail

/// Per variable (observed states, controls, disturbances): mean, std, last
/// valid value, trend slope.
inline std::vector<double> embed_context(const SeriesBlock& h) {
  std::vector<double> f;
  const std::size_t n = h.length();
  auto push = [&](const detail::Summary& s) {
    f.insert(f.end(), {s.mean, s.sd, s.last, s.slope});
  };
  for (int i = 0; i < h.n_obs; ++i)
    push(detail::summarize(n, [&](std::size_t t) { return h.y(t, i); }, [&](std::size_t t) { return h.m(t, i) != 0; }));
  for (int i = 0; i < h.n_u; ++i)
    push(detail::summarize(n, [&](std::size_t t) { return h.uc(t, i); }, [](std::size_t) { return true; }));
  for (int i = 0; i < h.n_w; ++i)
    push(detail::summarize(n, [&](std::size_t t) { return h.wd(t, i); }, [](std::size_t) { return true; }));
  return f;
}

/// Per control: mean, std, last, trend slope, total variation, step count.
inline std::vector<double> embed_action(const ScenarioInputs& in) {
  std::vector<double> f;
  const std::size_t n = in.horizon();
  for (int i = 0; i < in.n_u; ++i) {
    const auto s = detail::summarize(n, [&](std::size_t t) { return in.uc(t, i); }, [](std::size_t) { return true; });
    double tv = 0.0, steps = 0.0;
    for (std::size_t t = 1; t < n; ++t) {
      const double d = std::fabs(in.uc(t, i) - in.uc(t - 1, i));
      tv += d;
      steps += d > 1e-9 ? 1.0 : 0.0;
    }
    f.insert(f.end(), {s.mean, s.sd, s.last, s.slope, tv, steps});
  }
  return f;
}

/// Feature standardization frozen from calibration embeddings.
struct FeatureScaler {
  std::vector<double> mean, sd;

  static FeatureScaler fit(const std::vector<std::vector<double>>& rows) {
    FeatureScaler s;
    if (rows.empty()) return s;
    const std::size_t d = rows[0].size();
    s.mean.assign(d, 0.0);
    s.sd.assign(d, 0.0);
    for (const auto& r : rows)
      for (std::size_t j = 0; j < d; ++j) s.mean[j] += r[j];
    for (auto& m : s.mean) m /= static_cast<double>(rows.size());
    for (const auto& r : rows)
      for (std::size_t j = 0; j < d; ++j) s.sd[j] += (r[j] - s.mean[j]) * (r[j] - s.mean[j]);
    for (auto& v : s.sd) {
      v = std::sqrt(v / static_cast<double>(rows.size()));
      if (!(v > 1e-12)) v = 1.0;
    }
    return s;
  }

  std::vector<double> apply(std::vector<double> x) const {
    if (x.size() != mean.size()) throw ShapeError("embedding dimension differs from the calibration block");
    for (std::size_t j = 0; j < x.size(); ++j) x[j] = (x[j] - mean[j]) / sd[j];
    return x;
  }
};

// ---------------------------------------------------------------------------
// Support

struct ValidityConfig {
  double alpha = 0.10;         // support gate level
  double region_alpha = 0.05;  // marginal level of the calibration-normal region
  int k = 10;                  // calibration neighbours
  double w_ctx = 0.35;
  double w_act = 0.65;
  int n_cuts = 3;
  bool upper_quantile_statistic = false;  // decide on an upper predictive quantile instead of the mean
  double statistic_quantile = 0.9;
};

struct SupportScores {
  double ctx = 0.0;    // mean distance to the k nearest calibration contexts
  double act = 0.0;    // mean action distance to those same neighbours
  double supp = 0.0;   // weighted combination
  double joint = 0.0;  // joint k-NN distance, diagnostic only
};

inline double euclidean(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

/// k-NN support scores against standardized calibration embeddings;
/// `exclude` drops one calibration row (leave-one-out scoring).
inline SupportScores support_scores(std::span<const double> ctx, std::span<const double> act,
                                    const std::vector<std::vector<double>>& cal_ctx,
                                    const std::vector<std::vector<double>>& cal_act, int k, double w_ctx = 0.35,
                                    double w_act = 0.65, int exclude = -1) {
  const int n = static_cast<int>(cal_ctx.size()) - (exclude >= 0 ? 1 : 0);
  if (k < 1 || k > n) throw ConfigError("neighbour count k must lie in [1, N_cal]");
  std::vector<std::pair<double, int>> dc, dj;
  for (int i = 0; i < static_cast<int>(cal_ctx.size()); ++i) {
    if (i == exclude) continue;
    const double c = euclidean(ctx, cal_ctx[static_cast<std::size_t>(i)]);
    const double a = euclidean(act, cal_act[static_cast<std::size_t>(i)]);
    dc.emplace_back(c, i);
    dj.emplace_back(std::sqrt(c * c + a * a), i);
  }
  std::partial_sort(dc.begin(), dc.begin() + k, dc.end());
  std::partial_sort(dj.begin(), dj.begin() + k, dj.end());
  SupportScores s;
  for (int j = 0; j < k; ++j) {
    s.ctx += dc[static_cast<std::size_t>(j)].first;
    s.act += euclidean(act, cal_act[static_cast<std::size_t>(dc[static_cast<std::size_t>(j)].second)]);
    s.joint += dj[static_cast<std::size_t>(j)].first;
  }
  s.ctx /= k;
  s.act /= k;
  s.joint /= k;
  s.supp = w_ctx * s.ctx + w_act * s.act;
  return s;
}

/// Split-conformal quantile: the order statistic at ceil((1 - alpha)(N + 1)),
/// clipped to N.
inline double conformal_quantile(std::vector<double> scores, double alpha) {
  if (scores.empty()) throw ConfigError("conformal quantile of an empty calibration set");
  std::sort(scores.begin(), scores.end());
  const double n = static_cast<double>(scores.size());
  auto idx = static_cast<std::size_t>(std::ceil((1.0 - alpha) * (n + 1.0) - 1e-12));
  idx = std::clamp<std::size_t>(idx, 1, scores.size());
  return scores[idx - 1];
}

// ---------------------------------------------------------------------------
// Partitions

struct EventCuts {
  std::vector<int> cuts;      // ranked by input change, largest first
  std::vector<double> delta;  // delta[t] for t = 1..H-1 (delta[0] = 0)
  bool degenerate = false;    // no input change in the horizon
};

/// Ranks the steps t in [1, H) by the normalized input change
/// ||nu_t / s - nu_{t-1} / s|| with nu = (u, w) and s the per-feature MAD
/// over the horizon (std when the MAD is zero; constant features dropped).
/// A cut at t starts a new segment at the first changed step.
inline EventCuts event_cuts(const ScenarioInputs& in, int k = 3) {
  const int H = static_cast<int>(in.horizon());
  const int nf = in.n_u + in.n_w;
  auto feat = [&](int t, int j) { return j < in.n_u ? in.uc(static_cast<std::size_t>(t), j) : in.wd(static_cast<std::size_t>(t), j - in.n_u); };
  std::vector<double> scale(static_cast<std::size_t>(nf), 0.0);
  for (int j = 0; j < nf; ++j) {
    std::vector<double> x(static_cast<std::size_t>(H));
    for (int t = 0; t < H; ++t) x[static_cast<std::size_t>(t)] = feat(t, j);
    auto med = [](std::vector<double> v) {
      std::sort(v.begin(), v.end());
      const std::size_t m = v.size() / 2;
      return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
    };
    const double m = med(x);
    std::vector<double> dev(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) dev[i] = std::fabs(x[i] - m);
    double s = med(dev);
    if (!(s > 1e-12)) {
      const double mean = std::accumulate(x.begin(), x.end(), 0.0) / H;
      double v = 0.0;
      for (double xi : x) v += (xi - mean) * (xi - mean);
      s = std::sqrt(v / H);
    }
    scale[static_cast<std::size_t>(j)] = s > 1e-12 ? s : 0.0;
  }
  EventCuts ec;
  ec.delta.assign(static_cast<std::size_t>(H), 0.0);
  for (int t = 1; t < H; ++t) {
    double d2 = 0.0;
    for (int j = 0; j < nf; ++j) {
      const double s = scale[static_cast<std::size_t>(j)];
      if (s == 0.0) continue;
      const double d = (feat(t, j) - feat(t - 1, j)) / s;
      d2 += d * d;
    }
    ec.delta[static_cast<std::size_t>(t)] = std::sqrt(d2);
  }
  std::vector<int> idx;
  for (int t = 1; t < H; ++t) idx.push_back(t);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return ec.delta[static_cast<std::size_t>(a)] > ec.delta[static_cast<std::size_t>(b)]; });
  idx.resize(static_cast<std::size_t>(std::min<int>(k, static_cast<int>(idx.size()))));
  ec.cuts = idx;
  ec.degenerate = std::all_of(ec.delta.begin(), ec.delta.end(), [](double d) { return d == 0.0; });
  return ec;
}

struct PartitionFamily {
  std::string kind;
  std::vector<Partition> partitions;
  bool truncated = false;
};

/// {c1}, {c1,c2}, {c1,c2,c3} from ranked cuts, sorted within each partition.
inline PartitionFamily build_b4(const std::vector<int>& ranked, std::string kind = "event_aligned") {
  PartitionFamily f;
  f.kind = std::move(kind);
  std::vector<int> distinct;
  for (int c : ranked)
    if (std::find(distinct.begin(), distinct.end(), c) == distinct.end()) distinct.push_back(c);
  f.truncated = distinct.size() < 3;
  std::vector<int> cur;
  for (std::size_t j = 0; j < std::min<std::size_t>(3, distinct.size()); ++j) {
    cur.push_back(distinct[j]);
    auto sorted = cur;
    std::sort(sorted.begin(), sorted.end());
    f.partitions.push_back(Partition{sorted});
  }
  return f;
}

// ---------------------------------------------------------------------------
// Margins, defect, orbit diameter

/// Peak of the decision statistic on the safety target.
inline double peak_statistic(const Trajectory& tr, int target, const ValidityConfig& cfg, int* at = nullptr) {
  double best = -std::numeric_limits<double>::infinity();
  int arg = 0;
  for (int t = 0; t < static_cast<int>(tr.dist.size()); ++t) {
    const double v = cfg.upper_quantile_statistic ? tr.quantile_at(t, target, cfg.statistic_quantile) : tr.mean_at(t, target);
    if (v > best) {
      best = v;
      arg = t;
    }
  }
  if (at) *at = arg;
  return best;
}

struct PartitionOutcome {
  Partition partition;
  double peak = 0.0;
  double margin = 0.0;  // tau - peak
  int peak_at = 0;
  bool diverged = false;
};

/// Orbit evaluation of one scenario with a fixed encoded history.
class OrbitEvaluator {
 public:
  OrbitEvaluator(const ModelParams& mp, const Scenario& s, ValidityConfig cfg = {})
      : mp_(mp), s_(s), cfg_(cfg), enc_(encode_history(mp, s.history)) {
    s.validate();
  }

  Trajectory trajectory(const Partition& p) const { return rollout(mp_, enc_, s_.inputs, p); }

  PartitionOutcome outcome(const Partition& p) const {
    const auto tr = trajectory(p);
    PartitionOutcome o;
    o.partition = p;
    o.diverged = tr.diverged;
    o.peak = tr.diverged ? std::numeric_limits<double>::infinity() : peak_statistic(tr, s_.target, cfg_, &o.peak_at);
    o.margin = s_.tau - o.peak;
    return o;
  }

  double margin(const Partition& p) const { return outcome(p).margin; }

  const Scenario& scenario() const { return s_; }
  const ModelParams& model() const { return mp_; }
  const EncoderState& encoder() const { return enc_; }

 private:
  const ModelParams& mp_;
  const Scenario& s_;
  ValidityConfig cfg_;
  EncoderState enc_;
};

inline double partition_margin(const Scenario& s, const Partition& p, const ModelParams& mp, const ValidityConfig& cfg = {}) {
  return OrbitEvaluator(mp, s, cfg).margin(p);
}

struct OrbitSummary {
  std::vector<PartitionOutcome> outcomes;  // full rollout first, then the family
  bool defect = false;
  double diameter = 0.0;
  int argmin = 0;  // index into outcomes of the smallest margin
};

/// defect = 1 iff min margin < 0 <= max margin over family and the full
/// rollout; diameter = max peak - min peak over the same set.
inline OrbitSummary evaluate_orbit(const OrbitEvaluator& ev, const PartitionFamily& family) {
  OrbitSummary o;
  o.outcomes.push_back(ev.outcome(Partition{}));
  for (const auto& p : family.partitions) o.outcomes.push_back(ev.outcome(p));
  double lo = std::numeric_limits<double>::infinity(), hi = -lo, pmin = lo, pmax = -lo;
  for (std::size_t i = 0; i < o.outcomes.size(); ++i) {
    const auto& r = o.outcomes[i];
    if (r.margin < lo) {
      lo = r.margin;
      o.argmin = static_cast<int>(i);
    }
    hi = std::max(hi, r.margin);
    pmin = std::min(pmin, r.peak);
    pmax = std::max(pmax, r.peak);
  }
  o.defect = lo < 0.0 && hi >= 0.0;
  o.diameter = std::isfinite(pmax - pmin) ? pmax - pmin : std::numeric_limits<double>::infinity();
  return o;
}

inline bool partition_defect(const Scenario& s, const PartitionFamily& f, const ModelParams& mp, const ValidityConfig& cfg = {}) {
  return evaluate_orbit(OrbitEvaluator(mp, s, cfg), f).defect;
}

/// Peak spread over exactly the given partitions (zero for one partition).
inline double orbit_diameter(const Scenario& s, const PartitionFamily& f, const ModelParams& mp, const ValidityConfig& cfg = {}) {
  OrbitEvaluator ev(mp, s, cfg);
  if (f.partitions.size() < 2) return 0.0;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& p : f.partitions) {
    const double pk = ev.outcome(p).peak;
    lo = std::min(lo, pk);
    hi = std::max(hi, pk);
  }
  return hi - lo;
}

/// All partitions with 1..max_cuts interior cuts on `grid`.
inline std::vector<Partition> enumerate_partitions(const std::vector<int>& grid, int max_cuts) {
  std::vector<Partition> out;
  std::vector<int> cur;
  std::function<void(std::size_t)> rec = [&](std::size_t from) {
    if (!cur.empty()) out.push_back(Partition{cur});
    if (static_cast<int>(cur.size()) == max_cuts) return;
    for (std::size_t i = from; i < grid.size(); ++i) {
      cur.push_back(grid[i]);
      rec(i + 1);
      cur.pop_back();
    }
  };
  rec(0);
  return out;
}

inline std::vector<int> candidate_grid(int H) {
  std::vector<int> g;
  if (H <= 32) {
    for (int t = 1; t < H; ++t) g.push_back(t);
  } else {
    for (int i = 1; i < 32; ++i) g.push_back(static_cast<int>(std::lround(static_cast<double>(i) * H / 32.0)));
    g.erase(std::unique(g.begin(), g.end()), g.end());
  }
  return g;
}

enum class FamilyKind { EventAligned, Dyadic, MatchedRandom, DecisionStressed };

inline const char* to_string(FamilyKind k) {
  switch (k) {
    case FamilyKind::EventAligned: return "event_aligned";
    case FamilyKind::Dyadic: return "dyadic";
    case FamilyKind::MatchedRandom: return "matched_random";
    case FamilyKind::DecisionStressed: return "decision_stressed";
  }
  return "?";
}

/// Contrast families. Decision-stressed returns the single margin-minimizing
/// partition of an exhaustive 1-3 cut search, which determines the defect of
/// the whole enumerated family.
inline PartitionFamily contrast_family(FamilyKind kind, const OrbitEvaluator& ev, std::mt19937_64& rng, int n_cuts = 3) {
  const int H = ev.scenario().horizon();
  PartitionFamily f;
  f.kind = to_string(kind);
  switch (kind) {
    case FamilyKind::EventAligned:
      return build_b4(event_cuts(ev.scenario().inputs, n_cuts).cuts);
    case FamilyKind::Dyadic:
      f.partitions.push_back(Partition{{H / 2}});
      return f;
    case FamilyKind::MatchedRandom: {
      std::vector<int> all;
      for (int t = 1; t < H; ++t) all.push_back(t);
      std::vector<int> drawn;
      for (int j = 0; j < std::min<int>(n_cuts, H - 1); ++j) {
        std::uniform_int_distribution<std::size_t> pick(0, all.size() - 1);
        const auto i = pick(rng);
        drawn.push_back(all[i]);
        all.erase(all.begin() + static_cast<std::ptrdiff_t>(i));
      }
      auto b = build_b4(drawn, f.kind);
      return b;
    }
    case FamilyKind::DecisionStressed: {
      double best = std::numeric_limits<double>::infinity();
      Partition arg;
      for (const auto& p : enumerate_partitions(candidate_grid(H), n_cuts)) {
        const double m = ev.margin(p);
        if (m < best) {
          best = m;
          arg = p;
        }
      }
      f.partitions.push_back(arg);
      return f;
    }
  }
  return f;
}

// ---------------------------------------------------------------------------
// Calibration

struct CalibrationBlock {
  std::string id = "cal";
  std::string version = "1";
  std::string model_id;
  ValidityConfig config;
  FeatureScaler ctx_scale, act_scale;
  std::vector<std::vector<double>> ctx, act;  // standardized embeddings
  std::vector<double> support;                // leave-one-out support scores
  std::vector<double> orbit;                  // orbit diameters
  double q_support = 0.0;                     // (1 - alpha) quantile
  double region_support = 0.0;                // (1 - region_alpha) marginal bounds
  double region_orbit = 0.0;

  int size() const { return static_cast<int>(ctx.size()); }
  bool in_region(double supp, double orb) const { return supp <= region_support && orb <= region_orbit; }
};

inline SupportScores support_score(const Scenario& s, const CalibrationBlock& cal) {
  const auto c = cal.ctx_scale.apply(embed_context(s.history));
  const auto a = cal.act_scale.apply(embed_action(s.inputs));
  return support_scores(c, a, cal.ctx, cal.act, cal.config.k, cal.config.w_ctx, cal.config.w_act);
}

inline bool is_supported(double supp, const CalibrationBlock& cal) { return supp <= cal.q_support; }

/// Orbit diameter over the event-aligned B4 family and the full rollout.
inline double orbit_score(const OrbitEvaluator& ev, int n_cuts = 3) {
  return evaluate_orbit(ev, build_b4(event_cuts(ev.scenario().inputs, n_cuts).cuts)).diameter;
}

/// Calibration windows are scored only against each other (leave-one-out
/// for support); nothing from evaluation data enters the block.
inline CalibrationBlock calibrate(const std::vector<Scenario>& windows, const ModelParams& mp, ValidityConfig cfg = {},
                                  std::string id = "cal") {
  if (static_cast<int>(windows.size()) <= cfg.k) throw ConfigError("calibration needs more windows than neighbours");
  CalibrationBlock cal;
  cal.id = std::move(id);
  cal.model_id = mp.id;
  cal.config = cfg;
  std::vector<std::vector<double>> rc, ra;
  for (const auto& w : windows) {
    rc.push_back(embed_context(w.history));
    ra.push_back(embed_action(w.inputs));
  }
  cal.ctx_scale = FeatureScaler::fit(rc);
  cal.act_scale = FeatureScaler::fit(ra);
  for (std::size_t i = 0; i < windows.size(); ++i) {
    cal.ctx.push_back(cal.ctx_scale.apply(rc[i]));
    cal.act.push_back(cal.act_scale.apply(ra[i]));
  }
  for (int i = 0; i < cal.size(); ++i) {
    cal.support.push_back(support_scores(cal.ctx[static_cast<std::size_t>(i)], cal.act[static_cast<std::size_t>(i)], cal.ctx, cal.act,
                                         cfg.k, cfg.w_ctx, cfg.w_act, i).supp);
    cal.orbit.push_back(orbit_score(OrbitEvaluator(mp, windows[static_cast<std::size_t>(i)], cfg), cfg.n_cuts));
  }
  cal.q_support = conformal_quantile(cal.support, cfg.alpha);
  cal.region_support = conformal_quantile(cal.support, cfg.region_alpha);
  cal.region_orbit = conformal_quantile(cal.orbit, cfg.region_alpha);
  return cal;
}

// ---------------------------------------------------------------------------
// Decision

enum class Outcome { Accept, Abstain, Reopen, Witness };

inline const char* to_string(Outcome o) {
  switch (o) {
    case Outcome::Accept: return "accept";
    case Outcome::Abstain: return "abstain";
    case Outcome::Reopen: return "reopen";
    case Outcome::Witness: return "witness";
  }
  return "?";
}

struct ChannelAttribution {
  std::string channel;             // state, control, disturbance
  std::vector<double> contribution;  // latent-space vector, regime k* matrices
  std::string top_driver;
  std::vector<double> driver_weight;  // L1 contribution per input coordinate
};

struct WitnessPayload {
  Partition pi_star;
  int peak_at = 0;
  double peak = 0.0;
  int regime = 0;
  std::vector<ChannelAttribution> channels;
  std::vector<double> channel_shares;  // state, control, disturbance, additive, residual
};

struct Decision {
  std::string scenario_id;
  Outcome outcome = Outcome::Abstain;
  bool supported = false;
  bool raw_safe = false;
  bool defect = false;
  bool in_region = false;
  bool diverged = false;
  bool raw_unsafe_flag = false;  // supported, raw-unsafe: no approval
  SupportScores support;
  double phi_orbit = 0.0;
  double phi_self = 0.0;  // raw margin relative to the threshold
  double raw_peak = 0.0;
  double raw_margin = 0.0;
  double tau = 0.0;
  std::vector<PartitionOutcome> orbit;
  std::optional<WitnessPayload> witness;
  std::string calibration_id, calibration_version, model_id;
  std::string requested_at;  // caller-supplied, echoed for the audit trail
};

inline std::string latent_name(const ModelParams& mp, int j) {
  if (j < static_cast<int>(mp.names.obs.size())) return mp.names.obs[static_cast<std::size_t>(j)];
  if (j < mp.dims.n_obs) return "obs" + std::to_string(j);
  return "slack" + std::to_string(j - mp.dims.n_obs);
}

inline std::string input_name(const std::vector<std::string>& names, const char* prefix, int j) {
  return j < static_cast<int>(names.size()) ? names[static_cast<std::size_t>(j)] : std::string(prefix) + std::to_string(j);
}

/// Regime k's state/control/disturbance matrices at gamma (the base
/// matrices for the static variant).
inline ModulatedMatrices regime_matrices(const ModelParams& mp, int k, std::span<const double> gamma) {
  if (mp.config.variant != Variant::Static) return modulated_matrices(mp, k, gamma);
  const int dz = mp.dims.dz();
  auto blk = [&](const char* n, int cols) {
    auto b = mp.block(n, k);
    return Matrix(dz, cols, std::vector<double>(b.begin(), b.end()));
  };
  return {blk("A0", dz), blk("B0", mp.dims.n_u), blk("E0", mp.dims.n_w)};
}

inline ChannelAttribution attribute(const Matrix& M, std::span<const double> x, std::string channel,
                                    const std::function<std::string(int)>& name) {
  ChannelAttribution c;
  c.channel = std::move(channel);
  c.contribution = matvec(M, x);
  c.driver_weight.assign(static_cast<std::size_t>(M.cols), 0.0);
  for (int i = 0; i < M.rows; ++i)
    for (int j = 0; j < M.cols; ++j) c.driver_weight[static_cast<std::size_t>(j)] += std::fabs(M(i, j) * x[static_cast<std::size_t>(j)]);
  if (M.cols > 0) {
    const auto j = std::max_element(c.driver_weight.begin(), c.driver_weight.end()) - c.driver_weight.begin();
    c.top_driver = name(static_cast<int>(j));
  }
  return c;
}

/// Shares of |channel| (L1 over latent coordinates) at step t, bias excluded.
inline std::vector<double> channel_shares(const Trajectory& tr, int t) {
  const auto& c = tr.channels.at(static_cast<std::size_t>(t));
  std::vector<double> s;
  for (const auto* v : {&c.state, &c.control, &c.disturbance, &c.additive, &c.residual}) {
    double a = 0.0;
    for (double x : *v) a += std::fabs(x);
    s.push_back(a);
  }
  const double tot = std::accumulate(s.begin(), s.end(), 0.0);
  for (auto& x : s) x = tot > 0.0 ? x / tot : 0.0;
  return s;
}

inline WitnessPayload witness_payload(const ModelParams& mp, const Trajectory& tr, int target) {
  WitnessPayload w;
  w.pi_star = tr.partition;
  double best = -std::numeric_limits<double>::infinity();
  for (int t = 0; t < static_cast<int>(tr.dist.size()); ++t)
    if (tr.mean_at(t, target) > best) {
      best = tr.mean_at(t, target);
      w.peak_at = t;
    }
  w.peak = best;
  const auto t = static_cast<std::size_t>(w.peak_at);
  w.regime = tr.regime_at(w.peak_at);
  const auto M = regime_matrices(mp, w.regime, tr.gamma[t]);
  w.channels.push_back(attribute(M.A, tr.z[t], "state", [&](int j) { return latent_name(mp, j); }));
  w.channels.push_back(attribute(M.B, tr.u_std[t], "control", [&](int j) { return input_name(mp.names.controls, "u", j); }));
  w.channels.push_back(attribute(M.E, tr.w_std[t], "disturbance", [&](int j) { return input_name(mp.names.disturbances, "w", j); }));
  w.channel_shares = channel_shares(tr, w.peak_at);
  return w;
}

/// Four-outcome decision. Unsupported scenarios reopen iff their (support,
/// orbit) pair lies in the calibration-normal region, else abstain.
/// Supported, raw-safe scenarios with an orbit defect return the
/// most-unsafe partition as a witness; everything else is Accept, with
/// raw-unsafe scenarios flagged (no approval).
inline Decision decide(const Scenario& s, const ModelParams& mp, const CalibrationBlock& cal) {
  const auto& cfg = cal.config;
  Decision d;
  d.scenario_id = s.id;
  d.tau = s.tau;
  d.calibration_id = cal.id;
  d.calibration_version = cal.version;
  d.model_id = mp.id;
  OrbitEvaluator ev(mp, s, cfg);
  const auto family = build_b4(event_cuts(s.inputs, cfg.n_cuts).cuts);
  const auto orbit = evaluate_orbit(ev, family);
  d.orbit = orbit.outcomes;
  const auto& raw = orbit.outcomes.front();
  d.raw_peak = raw.peak;
  d.raw_margin = raw.margin;
  d.phi_self = raw.margin / std::max(std::fabs(s.tau), 1e-12);
  d.raw_safe = raw.margin > 0.0;
  d.defect = orbit.defect;
  d.phi_orbit = orbit.diameter;
  d.support = support_score(s, cal);
  d.supported = is_supported(d.support.supp, cal);
  d.in_region = cal.in_region(d.support.supp, d.phi_orbit);
  for (const auto& o : orbit.outcomes) d.diverged |= o.diverged;
  if (d.diverged) {
    d.outcome = Outcome::Abstain;
    return d;
  }
  if (!d.supported) {
    d.outcome = d.in_region ? Outcome::Reopen : Outcome::Abstain;
  } else if (d.raw_safe && d.defect) {
    d.outcome = Outcome::Witness;
    d.witness = witness_payload(mp, ev.trajectory(orbit.outcomes[static_cast<std::size_t>(orbit.argmin)].partition), s.target);
  } else {
    d.outcome = Outcome::Accept;
    d.raw_unsafe_flag = !d.raw_safe;
  }
  return d;
}

}  // namespace ccssix
