// Shadow-mode evaluation: decision policies and regret, the witness-family
// matrix, rollout forecast scores, and the suites that write result CSVs
// plus a run manifest.
#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "ccssix/checkpoint.hpp"
#include "ccssix/fitting.hpp"
#include "ccssix/plant.hpp"
#include "ccssix/stats.hpp"
#include "ccssix/validity.hpp"

namespace ccssix {

// ---------------------------------------------------------------------------
// Policies and regret

enum class Policy { Unfiltered, SupportOnly, Strict, CalibratedReopen, AlwaysAbstain };

inline const std::vector<Policy>& all_policies() {
  static const std::vector<Policy> p{Policy::Unfiltered, Policy::SupportOnly, Policy::Strict, Policy::CalibratedReopen,
                                     Policy::AlwaysAbstain};
  return p;
}

inline const char* to_string(Policy p) {
  switch (p) {
    case Policy::Unfiltered: return "unfiltered";
    case Policy::SupportOnly: return "support_only";
    case Policy::Strict: return "strict";
    case Policy::CalibratedReopen: return "calibrated_reopen";
    case Policy::AlwaysAbstain: return "always_abstain";
  }
  return "?";
}

inline Policy policy_from_string(const std::string& s) {
  for (auto p : all_policies())
    if (s == to_string(p)) return p;
  throw ConfigError("unknown policy '" + s + "'");
}

/// Whether `p` acts on a scenario given its decision.
inline bool acts(Policy p, const Decision& d) {
  const bool strict = d.supported && !d.defect && d.raw_safe && !d.diverged;
  switch (p) {
    case Policy::Unfiltered: return d.raw_safe && !d.diverged;
    case Policy::SupportOnly: return d.supported;
    case Policy::Strict: return strict;
    case Policy::CalibratedReopen: return strict || (d.outcome == Outcome::Reopen && d.raw_safe);
    case Policy::AlwaysAbstain: return false;
  }
  return false;
}

inline const char* kRegretDefinition =
    "regret(c) = c * (#oracle-unsafe scenarios acted on) + 1 * (#oracle-safe scenarios not acted on); "
    "a safe opportunity is any scenario whose oracle label is safe";

struct PolicyRow {
  std::string scenario_id;
  Outcome outcome = Outcome::Abstain;
  bool acted = false;
  bool oracle_safe = true;
};

struct PolicyResult {
  Policy policy = Policy::Strict;
  std::vector<PolicyRow> rows;

  int n() const { return static_cast<int>(rows.size()); }
  int acted() const { return static_cast<int>(std::count_if(rows.begin(), rows.end(), [](const PolicyRow& r) { return r.acted; })); }
  int unsafe_acted() const {
    return static_cast<int>(std::count_if(rows.begin(), rows.end(), [](const PolicyRow& r) { return r.acted && !r.oracle_safe; }));
  }
  int safe_missed() const {
    return static_cast<int>(std::count_if(rows.begin(), rows.end(), [](const PolicyRow& r) { return !r.acted && r.oracle_safe; }));
  }
  double acceptance_rate() const { return rows.empty() ? 0.0 : static_cast<double>(acted()) / n(); }
  /// Unsafe share of the acted scenarios; NaN (reported as "-") without actions.
  double unsafe_rate() const {
    return acted() == 0 ? std::numeric_limits<double>::quiet_NaN() : static_cast<double>(unsafe_acted()) / acted();
  }
};

inline long regret(const PolicyResult& r, int unsafe_cost) {
  if (unsafe_cost < 0) throw ConfigError("unsafe cost must be nonnegative");
  return static_cast<long>(unsafe_cost) * r.unsafe_acted() + r.safe_missed();
}

inline PolicyResult run_policy(Policy p, const std::vector<Decision>& decisions, const std::vector<bool>& oracle_safe) {
  if (decisions.size() != oracle_safe.size()) throw ShapeError("one oracle label per decision is required");
  PolicyResult r;
  r.policy = p;
  for (std::size_t i = 0; i < decisions.size(); ++i)
    r.rows.push_back(PolicyRow{decisions[i].scenario_id, decisions[i].outcome, acts(p, decisions[i]), oracle_safe[i]});
  return r;
}

inline std::vector<Decision> screen_all(const ModelParams& mp, const CalibrationBlock& cal, const std::vector<OracleScenario>& set) {
  std::vector<Decision> out;
  out.reserve(set.size());
  for (const auto& s : set) out.push_back(decide(s.scenario, mp, cal));
  return out;
}

inline std::vector<bool> oracle_labels(const std::vector<OracleScenario>& set) {
  std::vector<bool> out;
  for (const auto& s : set) out.push_back(s.safe);
  return out;
}

/// Chosen-action comparison: within each group of candidate actions for one
/// situation, a policy picks among the candidates it acts on the one with
/// the largest predicted margin; support-only picks its most-supported
/// candidate. -1 = the policy abstains for the whole group.
inline int chosen_action(Policy p, const std::vector<Decision>& group) {
  int best = -1;
  for (int i = 0; i < static_cast<int>(group.size()); ++i) {
    const auto& d = group[static_cast<std::size_t>(i)];
    if (!acts(p, d)) continue;
    if (best < 0) {
      best = i;
      continue;
    }
    const auto& b = group[static_cast<std::size_t>(best)];
    const bool better = p == Policy::SupportOnly ? d.support.supp < b.support.supp : d.raw_margin > b.raw_margin;
    if (better) best = i;
  }
  return best;
}

struct ChosenActionSummary {
  Policy policy = Policy::Strict;
  int groups = 0;
  int chosen = 0;
  int unsafe = 0;
  double ci_lo = 0.0, ci_hi = 1.0;  // Clopper-Pearson on unsafe / chosen
};

inline ChosenActionSummary compare_chosen_actions(Policy p, const std::vector<std::vector<Decision>>& groups,
                                                  const std::vector<std::vector<bool>>& oracle_safe) {
  if (groups.size() != oracle_safe.size()) throw ShapeError("one label set per group is required");
  ChosenActionSummary s;
  s.policy = p;
  s.groups = static_cast<int>(groups.size());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const int c = chosen_action(p, groups[g]);
    if (c < 0) continue;
    ++s.chosen;
    s.unsafe += !oracle_safe[g].at(static_cast<std::size_t>(c));
  }
  if (s.chosen > 0) std::tie(s.ci_lo, s.ci_hi) = clopper_pearson(s.unsafe, s.chosen);
  return s;
}

// ---------------------------------------------------------------------------
// Witness-family matrix

/// Families compared on the raw-approved scenarios. raw_full is the hard
/// gate on the full rollout alone; it can never fire a defect.
inline const std::vector<std::string>& witness_family_names() {
  static const std::vector<std::string> n{"raw_full", "event_aligned", "dyadic", "matched_random", "decision_stressed"};
  return n;
}

struct WitnessRow {
  std::string scenario_id;
  bool oracle_safe = true;
  bool raw_safe = false;
  double oracle_peak = 0.0, raw_peak = 0.0;
  std::vector<std::uint8_t> defect;  // per family; empty when not raw-safe
  std::vector<std::vector<int>> argmin_cuts;
};

struct FamilyCounts {
  std::string family;
  int false_safe_prevented = 0;
  int true_safe_blocked = 0;
};

struct WitnessMatrix {
  int n_scenarios = 0;
  int pool_false_safe = 0;  // raw-safe, oracle-unsafe
  int pool_true_safe = 0;   // raw-safe, oracle-safe
  std::vector<FamilyCounts> families;
  std::vector<WitnessRow> rows;

  const FamilyCounts& family(const std::string& name) const {
    for (const auto& f : families)
      if (f.family == name) return f;
    throw ConfigError("no family '" + name + "' in the witness matrix");
  }
};

inline std::uint64_t scenario_seed(std::uint64_t seed, std::size_t i) {
  std::uint64_t x = seed + 0x9e3779b97f4a7c15ULL * (i + 1);  // splitmix64 finalizer
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Counts, per family, the raw false-safe approvals whose orbit defect fires
/// (prevented) and the raw true-safe approvals it blocks. Matched-random
/// draws use a per-scenario seed, so counts do not depend on order.
inline WitnessMatrix witness_matrix(const ModelParams& mp, const std::vector<OracleScenario>& set, std::uint64_t seed,
                                    const ValidityConfig& cfg = {}) {
  WitnessMatrix m;
  m.n_scenarios = static_cast<int>(set.size());
  for (const auto& n : witness_family_names()) m.families.push_back(FamilyCounts{n});
  const FamilyKind kinds[] = {FamilyKind::EventAligned, FamilyKind::Dyadic, FamilyKind::MatchedRandom, FamilyKind::DecisionStressed};
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto& os = set[i];
    OrbitEvaluator ev(mp, os.scenario, cfg);
    const auto raw = ev.outcome(Partition{});
    WitnessRow row;
    row.scenario_id = os.scenario.id;
    row.oracle_safe = os.safe;
    row.oracle_peak = os.peak;
    row.raw_peak = raw.peak;
    row.raw_safe = raw.margin > 0.0;
    if (row.raw_safe) {
      row.defect.push_back(0);  // raw_full
      row.argmin_cuts.push_back({});
      std::mt19937_64 rng(scenario_seed(seed, i));
      for (auto k : kinds) {
        const auto o = evaluate_orbit(ev, contrast_family(k, ev, rng, cfg.n_cuts));
        row.defect.push_back(o.defect);
        row.argmin_cuts.push_back(o.outcomes[static_cast<std::size_t>(o.argmin)].partition.cuts);
      }
      (os.safe ? m.pool_true_safe : m.pool_false_safe) += 1;
      for (std::size_t f = 0; f < m.families.size(); ++f) {
        if (!row.defect[f]) continue;
        (os.safe ? m.families[f].true_safe_blocked : m.families[f].false_safe_prevented) += 1;
      }
    }
    m.rows.push_back(std::move(row));
  }
  return m;
}

struct FamilyTest {
  std::string a, b;
  double p = 1.0;
  bool reject = false;  // Holm at the family-wise level
};

/// Worst-case McNemar of event-aligned against each contrast family (and
/// decision-stressed against event-aligned), Holm-corrected.
inline std::vector<FamilyTest> witness_tests(const WitnessMatrix& m, double alpha = 0.01) {
  std::vector<FamilyTest> t{{"event_aligned", "dyadic"}, {"event_aligned", "matched_random"}, {"event_aligned", "raw_full"},
                            {"decision_stressed", "event_aligned"}};
  std::vector<double> p;
  for (auto& x : t) {
    x.p = mcnemar_worst_case(m.family(x.a).false_safe_prevented, m.family(x.b).false_safe_prevented, m.pool_false_safe);
    p.push_back(x.p);
  }
  const auto r = holm_bonferroni(p, alpha);
  for (std::size_t i = 0; i < t.size(); ++i) t[i].reject = r[i];
  return t;
}

// ---------------------------------------------------------------------------
// Worked example

struct WorkedExample {
  bool found = false;
  std::string scenario_id;
  double tau = 0.0, raw_peak = 0.0, single_cut_peak = 0.0, oracle_peak = 0.0;
  Partition single_cut;
  WitnessPayload witness;
  std::string top_control_driver;
};

/// First scenario (in order) whose raw rollout is below tau, whose
/// event-aligned single-cut partition exceeds it, whose oracle is unsafe,
/// and whose witness (most-unsafe event-aligned partition) names
/// `control` as the top control-channel driver.
inline WorkedExample find_worked_example(const ModelParams& mp, const std::vector<OracleScenario>& set,
                                         const std::string& control, const ValidityConfig& cfg = {}) {
  WorkedExample w;
  for (const auto& os : set) {
    if (os.safe) continue;
    OrbitEvaluator ev(mp, os.scenario, cfg);
    const auto fam = build_b4(event_cuts(os.scenario.inputs, cfg.n_cuts).cuts);
    if (fam.partitions.empty()) continue;
    const auto o = evaluate_orbit(ev, fam);
    const auto& raw = o.outcomes.front();
    const auto& one = o.outcomes[1];
    if (!(raw.margin > 0.0) || !(one.margin < 0.0)) continue;
    const auto wp = witness_payload(mp, ev.trajectory(o.outcomes[static_cast<std::size_t>(o.argmin)].partition), os.scenario.target);
    const auto& ctl = wp.channels.at(1).top_driver;
    if (ctl != control) continue;
    w.found = true;
    w.scenario_id = os.scenario.id;
    w.tau = os.scenario.tau;
    w.raw_peak = raw.peak;
    w.single_cut = one.partition;
    w.single_cut_peak = one.peak;
    w.oracle_peak = os.peak;
    w.witness = wp;
    w.top_control_driver = ctl;
    return w;
  }
  return w;
}

// ---------------------------------------------------------------------------
// Rollout forecast scores

/// Open-loop rollout scores over windows of `range` (history, then H steps
/// driven by the recorded inputs), on observed entries in raw units.
inline ForecastMetrics rollout_metrics(const ModelParams& mp, const SeriesBlock& data, const Range& range, int history,
                                       int H, int stride, int only_var = -1) {
  std::vector<PredictiveDistribution> pred;
  std::vector<double> truth;
  std::vector<std::uint8_t> mask;
  for (auto s : window_starts(range, history, H, stride)) {
    const auto f = data.slice(s, s + static_cast<std::size_t>(H));
    const auto tr = rollout(mp, data.slice(s - static_cast<std::size_t>(history), s), inputs_of(f));
    for (int t = 0; t < H; ++t)
      for (int i = 0; i < data.n_obs; ++i) {
        if (only_var >= 0 && i != only_var) continue;
        auto d = tr.diverged ? PredictiveDistribution{1e6, 1.0, 5.0} : tr.dist[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)];
        pred.push_back(d);
        truth.push_back(f.y(static_cast<std::size_t>(t), i));
        mask.push_back(f.m(static_cast<std::size_t>(t), i));
      }
  }
  if (pred.empty()) throw ConfigError("range too short for one evaluation window");
  return forecast_metrics(pred, truth, mask);
}

// ---------------------------------------------------------------------------
// Protocols

/// Synthetic recovery: static versus adaptive on the switching-LPV system.
struct SyntheticProtocol {
  LpvSystem system;
  std::size_t length = 3000;
  std::uint64_t data_seed = 99;
  double train_frac = 0.6, cal_frac = 0.1;
  int epochs = 120;
  int windows_per_epoch = 256;
  int history = 32, horizon = 16, eval_stride = 8;
};

struct SyntheticRow {
  std::uint64_t seed = 0;
  Variant variant = Variant::Static;
  ForecastMetrics metrics;
  double fit_seconds = 0.0;
};

inline FitConfig synthetic_fit_config(const SyntheticProtocol& p, Variant v) {
  FitConfig cfg;
  cfg.variant = v;
  cfg.epochs = p.epochs;
  cfg.max_windows_per_epoch = p.windows_per_epoch;
  cfg.history_length = p.history;
  cfg.window_length = p.horizon;
  return cfg;
}

inline std::vector<SyntheticRow> run_synthetic(const SyntheticProtocol& p, const std::vector<std::uint64_t>& seeds) {
  const auto data = generate_lpv_series(p.system, p.length, p.data_seed);
  const auto split = SplitSpec::fractions(data.length(), p.train_frac, p.cal_frac);
  std::vector<SyntheticRow> out;
  for (auto seed : seeds)
    for (auto v : {Variant::Static, Variant::Adaptive}) {
      const auto t0 = std::chrono::steady_clock::now();
      const auto res = fit(data, split, synthetic_fit_config(p, v), seed);
      SyntheticRow r;
      r.seed = seed;
      r.variant = v;
      r.fit_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      r.metrics = rollout_metrics(res.params, data, split.evaluation, p.history, p.horizon, p.eval_stride);
      out.push_back(r);
    }
  return out;
}

/// Plant pipeline: operating data, a fitted adaptive model, a calibration
/// block from the calibration range, and the seeded oracle scenario sets.
struct PlantProtocol {
  PlantParams plant;
  std::size_t length = 6000;
  std::uint64_t data_seed = 7;
  double train_frac = 0.7, cal_frac = 0.15;
  int epochs = 40;
  int windows_per_epoch = 256;
  int history = 48, horizon = 16;
  int calibration_windows = 64;
  int library_size = 200;
  std::uint64_t library_seed = 11;
  int failure_mode_each = 20;
  std::uint64_t failure_mode_seed = 3;
  int policy_groups = 12;
  ValidityConfig validity;
};

inline FitConfig plant_fit_config(const PlantProtocol& p) {
  FitConfig cfg;
  cfg.epochs = p.epochs;
  cfg.max_windows_per_epoch = p.windows_per_epoch;
  cfg.history_length = p.history;
  cfg.window_length = p.horizon;
  cfg.names = VariableNames{kPlantObs, kPlantControls, kPlantDisturbances};
  return cfg;
}

inline std::vector<bool> plant_hurdle() { return {false, false, true, false}; }

inline SeriesBlock plant_data(const PlantProtocol& p) { return generate_plant_series(p.plant, p.length, p.data_seed); }

inline SplitSpec plant_split(const PlantProtocol& p, const SeriesBlock& data) {
  return SplitSpec::fractions(data.length(), p.train_frac, p.cal_frac);
}

inline ModelParams fit_plant_model(const PlantProtocol& p, std::uint64_t seed) {
  const auto data = plant_data(p);
  auto mp = fit(data, plant_split(p, data), plant_fit_config(p), seed, plant_hurdle()).params;
  mp.id = "plant-adaptive-s" + std::to_string(seed);
  return mp;
}

/// Evenly spaced windows of the calibration range (threshold irrelevant).
inline std::vector<Scenario> calibration_windows(const SeriesBlock& data, const Range& r, int history, int H, int n, int target) {
  const auto starts = window_starts(r, history, H, 1);
  if (starts.empty()) throw ConfigError("calibration range too short for one window");
  std::vector<Scenario> out;
  const int m = std::min<int>(n, static_cast<int>(starts.size()));
  for (int i = 0; i < m; ++i) {
    const auto s = starts[static_cast<std::size_t>(i) * starts.size() / static_cast<std::size_t>(m)];
    Scenario sc;
    sc.id = "cal-" + std::to_string(s);
    sc.history = data.slice(s - static_cast<std::size_t>(history), s);
    sc.inputs = inputs_of(data.slice(s, s + static_cast<std::size_t>(H)));
    sc.tau = 0.0;
    sc.target = target;
    out.push_back(std::move(sc));
  }
  return out;
}

inline CalibrationBlock calibrate_plant(const PlantProtocol& p, const ModelParams& mp, const std::string& id = "plant-cal") {
  const auto data = plant_data(p);
  const auto w = calibration_windows(data, plant_split(p, data).calibration, p.history, p.horizon, p.calibration_windows, kPlantN2O);
  return calibrate(w, mp, p.validity, id);
}

/// Groups of candidate actions for the chosen-action comparison: each group
/// shares one operating situation and offers set-point cuts of increasing
/// depth.
inline std::vector<std::vector<OracleScenario>> candidate_groups(const PlantProtocol& p, double tau, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<std::vector<OracleScenario>> out;
  for (int g = 0; g < p.policy_groups; ++g) {
    InterventionSpec s;
    s.start = 2 + static_cast<int>(unif(rng) * 4.0);
    s.duration = 6 + static_cast<int>(unif(rng) * 8.0);
    s.base_load = 0.85 + 0.3 * unif(rng);
    s.temperature = 13.0 + 4.0 * unif(rng);
    s.n2o_yield = std::exp(0.35 * std::normal_distribution<double>(0.0, 1.0)(rng));
    s.seed = rng();
    std::vector<OracleScenario> grp;
    for (double depth : {0.3, 0.8, 1.3, 1.7}) {
      s.depth = depth;
      grp.push_back(make_plant_scenario(p.plant, s, tau, {}, "g" + std::to_string(g) + "-d" + std::to_string(static_cast<int>(depth * 10))));
    }
    out.push_back(std::move(grp));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reports

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string hex(std::uint64_t x) {
  std::ostringstream o;
  o << std::hex << std::setw(16) << std::setfill('0') << x;
  return o.str();
}

/// Fixed-precision number for CSV cells; NaN as "-".
inline std::string cell(double x, int digits = 6) {
  if (std::isnan(x)) return "-";
  std::ostringstream o;
  o << std::setprecision(digits) << x;
  return o.str();
}

class CsvWriter {
 public:
  explicit CsvWriter(const std::string& path) : out_(path) {
    if (!out_) throw DocumentError("cannot write '" + path + "'");
    out_ << "# " << kRegretDefinition << '\n';
  }
  template <class... Ts>
  void row(const Ts&... xs) {
    bool first = true;
    ((out_ << (first ? "" : ",") << xs, first = false), ...);
    out_ << '\n';
  }
  void row(const std::vector<std::string>& xs) {
    for (std::size_t i = 0; i < xs.size(); ++i) out_ << (i ? "," : "") << xs[i];
    out_ << '\n';
  }

 private:
  std::ofstream out_;
};

inline json to_json(const PlantProtocol& p) {
  return {{"length", p.length}, {"data_seed", p.data_seed}, {"train_frac", p.train_frac}, {"cal_frac", p.cal_frac},
          {"epochs", p.epochs}, {"windows_per_epoch", p.windows_per_epoch}, {"history", p.history}, {"horizon", p.horizon},
          {"calibration_windows", p.calibration_windows}, {"library_size", p.library_size}, {"library_seed", p.library_seed},
          {"failure_mode_each", p.failure_mode_each}, {"failure_mode_seed", p.failure_mode_seed},
          {"policy_groups", p.policy_groups}, {"validity", to_json(p.validity)}};
}

inline json to_json(const SyntheticProtocol& p) {
  return {{"length", p.length}, {"data_seed", p.data_seed}, {"train_frac", p.train_frac}, {"cal_frac", p.cal_frac},
          {"epochs", p.epochs}, {"windows_per_epoch", p.windows_per_epoch}, {"history", p.history},
          {"horizon", p.horizon}, {"eval_stride", p.eval_stride}};
}

/// Manifest of one suite run: seeds, hash of the configuration document and
/// hash of the data the suite consumed. Contains no timestamps, so reruns
/// are byte-identical.
inline void write_manifest(const std::string& dir, const std::string& suite, const std::vector<std::uint64_t>& seeds,
                           const json& config, const std::string& data_hash, const std::vector<std::string>& outputs) {
  json m{{"format", "ccssix.manifest/1"}, {"suite", suite}, {"seeds", seeds}, {"config", config},
         {"config_hash", hex(fnv1a(config.dump()))}, {"data_hash", data_hash}, {"outputs", outputs},
         {"regret_definition", kRegretDefinition}};
  write_json_file((std::filesystem::path(dir) / (suite + "_manifest.json")).string(), m);
}

inline std::string path_in(const std::string& dir, const std::string& name) {
  std::filesystem::create_directories(dir);
  return (std::filesystem::path(dir) / name).string();
}

inline void write_synthetic_csv(const std::string& path, const std::vector<SyntheticRow>& rows) {
  CsvWriter w(path);
  w.row("seed", "variant", "rmse", "mae", "r2", "crps", "nll", "n", "fit_seconds");
  for (const auto& r : rows)
    w.row(r.seed, to_string(r.variant), cell(r.metrics.rmse), cell(r.metrics.mae), cell(r.metrics.r2), cell(r.metrics.crps),
          cell(r.metrics.nll), r.metrics.n, cell(r.fit_seconds, 4));
}

inline void write_library_csv(const std::string& path, const Library& lib, const ModelParams* mp) {
  CsvWriter w(path);
  w.row("scenario_id", "depth", "start", "duration", "base_load", "temperature", "load_step", "load_step_at", "n2o_yield",
        "energy", "savings_pct", "oracle_peak", "tau", "oracle_safe", "raw_peak", "raw_safe");
  for (const auto& s : lib.scenarios) {
    double raw = std::nan("");
    if (mp) raw = OrbitEvaluator(*mp, s.scenario).outcome(Partition{}).peak;
    w.row(s.scenario.id, cell(s.spec.depth), s.spec.start, s.spec.duration, cell(s.spec.base_load), cell(s.spec.temperature),
          cell(s.spec.load_step), s.spec.load_step_at, cell(s.spec.n2o_yield), cell(s.energy), cell(s.savings), cell(s.peak),
          cell(lib.tau), s.safe ? 1 : 0, cell(raw), mp ? (raw < lib.tau ? "1" : "0") : "-");
  }
}

/// Median energy saving of the safe and the unsafe library scenarios.
inline std::pair<double, double> frontier_medians(const Library& lib) {
  std::vector<double> safe, unsafe;
  for (const auto& s : lib.scenarios) (s.safe ? safe : unsafe).push_back(s.savings);
  auto med = [](std::vector<double> v) { return v.empty() ? std::nan("") : percentile(std::move(v), 0.5); };
  return {med(safe), med(unsafe)};
}

inline void write_witness_csv(const std::string& dir, const WitnessMatrix& m, const std::vector<FamilyTest>& tests) {
  {
    CsvWriter w(path_in(dir, "witness_matrix.csv"));
    w.row("family", "false_safe_pool", "false_safe_prevented", "prevented_ci_lo", "prevented_ci_hi", "true_safe_pool",
          "true_safe_blocked", "blocked_ci_lo", "blocked_ci_hi");
    for (const auto& f : m.families) {
      auto ci = [](int k, int n) { return n > 0 ? clopper_pearson(k, n) : std::pair<double, double>{std::nan(""), std::nan("")}; };
      const auto [plo, phi] = ci(f.false_safe_prevented, m.pool_false_safe);
      const auto [blo, bhi] = ci(f.true_safe_blocked, m.pool_true_safe);
      w.row(f.family, m.pool_false_safe, f.false_safe_prevented, cell(plo, 4), cell(phi, 4), m.pool_true_safe,
            f.true_safe_blocked, cell(blo, 4), cell(bhi, 4));
    }
  }
  {
    CsvWriter w(path_in(dir, "witness_tests.csv"));
    w.row("family_a", "family_b", "prevented_a", "prevented_b", "pool", "mcnemar_worst_case_p", "holm_reject_0.01");
    for (const auto& t : tests)
      w.row(t.a, t.b, m.family(t.a).false_safe_prevented, m.family(t.b).false_safe_prevented, m.pool_false_safe, cell(t.p, 6),
            t.reject ? 1 : 0);
  }
  {
    CsvWriter w(path_in(dir, "witness_scenarios.csv"));
    std::vector<std::string> h{"scenario_id", "oracle_safe", "oracle_peak", "raw_peak", "raw_safe"};
    for (const auto& n : witness_family_names()) h.push_back("defect_" + n);
    w.row(h);
    for (const auto& r : m.rows) {
      std::vector<std::string> c{r.scenario_id, r.oracle_safe ? "1" : "0", cell(r.oracle_peak), cell(r.raw_peak), r.raw_safe ? "1" : "0"};
      for (std::size_t f = 0; f < witness_family_names().size(); ++f) c.push_back(r.raw_safe ? std::to_string(r.defect[f]) : "-");
      w.row(c);
    }
  }
}

struct ShadowReport {
  std::vector<PolicyResult> combined;          // unsafe-supported + safe-unsupported
  std::vector<PolicyResult> unsafe_supported;  // per set
  std::vector<PolicyResult> safe_unsupported;
  std::vector<ChosenActionSummary> chosen;
  std::vector<Decision> decisions;             // combined order
};

inline ShadowReport run_shadow(const ModelParams& mp, const CalibrationBlock& cal, const FailureModeSets& sets,
                               const std::vector<std::vector<OracleScenario>>& groups) {
  ShadowReport r;
  const auto du = screen_all(mp, cal, sets.unsafe_supported), ds = screen_all(mp, cal, sets.safe_unsupported);
  r.decisions = du;
  r.decisions.insert(r.decisions.end(), ds.begin(), ds.end());
  auto lu = oracle_labels(sets.unsafe_supported), ls = oracle_labels(sets.safe_unsupported);
  auto all = lu;
  all.insert(all.end(), ls.begin(), ls.end());
  std::vector<std::vector<Decision>> gd;
  std::vector<std::vector<bool>> gl;
  for (const auto& g : groups) {
    gd.push_back(screen_all(mp, cal, g));
    gl.push_back(oracle_labels(g));
  }
  for (auto p : all_policies()) {
    r.combined.push_back(run_policy(p, r.decisions, all));
    r.unsafe_supported.push_back(run_policy(p, du, lu));
    r.safe_unsupported.push_back(run_policy(p, ds, ls));
    r.chosen.push_back(compare_chosen_actions(p, gd, gl));
  }
  return r;
}

inline const PolicyResult& result_for(const std::vector<PolicyResult>& v, Policy p) {
  for (const auto& r : v)
    if (r.policy == p) return r;
  throw ConfigError(std::string("no result for policy ") + to_string(p));
}

inline void write_shadow_csv(const std::string& dir, const ShadowReport& r) {
  {
    CsvWriter w(path_in(dir, "shadow_policies.csv"));
    w.row("set", "policy", "n", "acted", "acceptance_rate", "unsafe_acted", "unsafe_rate", "unsafe_ci_lo", "unsafe_ci_hi",
          "safe_missed", "regret_c2", "regret_c4", "regret_c8");
    auto emit = [&](const char* set, const std::vector<PolicyResult>& v) {
      for (const auto& p : v) {
        auto ci = p.acted() > 0 ? clopper_pearson(p.unsafe_acted(), p.acted()) : std::pair<double, double>{std::nan(""), std::nan("")};
        w.row(set, to_string(p.policy), p.n(), p.acted(), cell(p.acceptance_rate(), 4), p.unsafe_acted(), cell(p.unsafe_rate(), 4),
              cell(ci.first, 4), cell(ci.second, 4), p.safe_missed(), regret(p, 2), regret(p, 4), regret(p, 8));
      }
    };
    emit("combined", r.combined);
    emit("unsafe_supported", r.unsafe_supported);
    emit("safe_unsupported", r.safe_unsupported);
  }
  {
    CsvWriter w(path_in(dir, "shadow_chosen_actions.csv"));
    w.row("policy", "groups", "chosen", "unsafe_chosen", "unsafe_rate", "ci_lo", "ci_hi");
    for (const auto& c : r.chosen)
      w.row(to_string(c.policy), c.groups, c.chosen, c.unsafe, cell(c.chosen ? static_cast<double>(c.unsafe) / c.chosen : std::nan(""), 4),
            cell(c.chosen ? c.ci_lo : std::nan(""), 4), cell(c.chosen ? c.ci_hi : std::nan(""), 4));
  }
  {
    CsvWriter w(path_in(dir, "shadow_decisions.csv"));
    w.row("scenario_id", "outcome", "supported", "raw_safe", "defect", "in_region", "supp", "phi_orbit", "raw_peak", "tau");
    for (const auto& d : r.decisions)
      w.row(d.scenario_id, to_string(d.outcome), d.supported ? 1 : 0, d.raw_safe ? 1 : 0, d.defect ? 1 : 0, d.in_region ? 1 : 0,
            cell(d.support.supp), cell(d.phi_orbit), cell(d.raw_peak), cell(d.tau));
  }
}

}  // namespace ccssix
