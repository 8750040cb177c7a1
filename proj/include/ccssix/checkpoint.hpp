// JSON documents: model checkpoints, calibration blocks, scenarios and
// decisions. Every document carries a "format" tag with a version; readers
// reject unknown formats.
#pragma once

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "ccssix/validity.hpp"

namespace ccssix {

using json = nlohmann::json;

inline constexpr const char* kModelFormat = "ccssix.model/1";
inline constexpr const char* kCalibrationFormat = "ccssix.calibration/1";
inline constexpr const char* kScenarioFormat = "ccssix.scenario/1";
inline constexpr const char* kDecisionFormat = "ccssix.decision/1";

class DocumentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void expect_format(const json& j, const char* fmt) {
  if (!j.is_object() || !j.contains("format")) throw DocumentError(std::string("document has no format tag; expected ") + fmt);
  if (j.at("format").get<std::string>() != fmt)
    throw DocumentError("unsupported document format '" + j.at("format").get<std::string>() + "'; expected " + fmt);
}

/// Non-finite numbers are written as null and read back as +inf (peaks and
/// margins of diverged rollouts) or NaN.
inline json num(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }
inline double num_or(const json& j, double fallback) { return j.is_null() ? fallback : j.get<double>(); }

/// T x n row-major vector as an array of rows.
inline json rows(const std::vector<double>& v, int n, std::size_t T) {
  json out = json::array();
  for (std::size_t t = 0; t < T; ++t) {
    json r = json::array();
    for (int i = 0; i < n; ++i) r.push_back(num(v[t * static_cast<std::size_t>(n) + static_cast<std::size_t>(i)]));
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<double> flatten(const json& j, int n, const char* what) {
  std::vector<double> v;
  for (const auto& r : j) {
    if (!r.is_array() || static_cast<int>(r.size()) != n)
      throw DocumentError(std::string(what) + " rows must have " + std::to_string(n) + " entries");
    for (const auto& x : r) v.push_back(num_or(x, std::nan("")));
  }
  return v;
}

inline int width(const json& rows_j) { return rows_j.empty() ? 0 : static_cast<int>(rows_j.at(0).size()); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Series and scenarios

/// Missing observations are written as null.
inline json to_json(const SeriesBlock& b) {
  json obs = json::array();
  for (std::size_t t = 0; t < b.length(); ++t) {
    json r = json::array();
    for (int i = 0; i < b.n_obs; ++i) r.push_back(b.m(t, i) ? detail::num(b.y(t, i)) : json(nullptr));
    obs.push_back(std::move(r));
  }
  return {{"obs", obs}, {"u", detail::rows(b.u, b.n_u, b.length())}, {"w", detail::rows(b.w, b.n_w, b.length())}, {"dt", b.dt}};
}

inline SeriesBlock series_from_json(const json& j) {
  const auto& o = j.at("obs");
  const auto& dt = j.at("dt");
  SeriesBlock b(detail::width(o), detail::width(j.at("u")), detail::width(j.at("w")), dt.size());
  if (o.size() != dt.size() || j.at("u").size() != dt.size() || j.at("w").size() != dt.size())
    throw DocumentError("series arrays differ in length");
  for (std::size_t t = 0; t < dt.size(); ++t) {
    if (static_cast<int>(o[t].size()) != b.n_obs) throw DocumentError("observation rows differ in width");
    for (int i = 0; i < b.n_obs; ++i) {
      const auto& x = o[t][static_cast<std::size_t>(i)];
      b.m(t, i) = !x.is_null();
      b.y(t, i) = x.is_null() ? 0.0 : x.get<double>();
    }
    b.dt[t] = dt[t].get<double>();
  }
  b.u = detail::flatten(j.at("u"), b.n_u, "control");
  b.w = detail::flatten(j.at("w"), b.n_w, "disturbance");
  return b;
}

inline json to_json(const ScenarioInputs& in) {
  return {{"u", detail::rows(in.u, in.n_u, in.horizon())}, {"w", detail::rows(in.w, in.n_w, in.horizon())}, {"dt", in.dt}};
}

inline ScenarioInputs inputs_from_json(const json& j) {
  ScenarioInputs in;
  in.n_u = detail::width(j.at("u"));
  in.n_w = detail::width(j.at("w"));
  in.u = detail::flatten(j.at("u"), in.n_u, "control");
  in.w = detail::flatten(j.at("w"), in.n_w, "disturbance");
  in.dt = j.at("dt").get<std::vector<double>>();
  in.validate();
  return in;
}

inline json to_json(const Scenario& s) {
  return {{"format", kScenarioFormat}, {"id", s.id}, {"tau", s.tau}, {"target", s.target},
          {"history", to_json(s.history)}, {"inputs", to_json(s.inputs)}};
}

/// `target` may be an index or the name of an observed variable in `obs_names`.
inline Scenario scenario_from_json(const json& j, const std::vector<std::string>& obs_names = {}) {
  detail::expect_format(j, kScenarioFormat);
  Scenario s;
  s.id = j.value("id", std::string());
  s.tau = j.at("tau").get<double>();
  const auto& t = j.at("target");
  if (t.is_string()) {
    auto it = std::find(obs_names.begin(), obs_names.end(), t.get<std::string>());
    if (it == obs_names.end()) throw DocumentError("unknown target variable '" + t.get<std::string>() + "'");
    s.target = static_cast<int>(it - obs_names.begin());
  } else {
    s.target = t.get<int>();
  }
  s.history = series_from_json(j.at("history"));
  s.inputs = inputs_from_json(j.at("inputs"));
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Model checkpoints

inline json to_json(const Standardizer& s) { return {{"mean", s.mean}, {"sd", s.sd}}; }
inline Standardizer standardizer_from_json(const json& j) {
  return Standardizer{j.at("mean").get<std::vector<double>>(), j.at("sd").get<std::vector<double>>()};
}

inline json to_json(const ModelParams& mp) {
  const auto& d = mp.dims;
  const auto& c = mp.config;
  return {{"format", kModelFormat},
          {"id", mp.id},
          {"dims", {{"n_obs", d.n_obs}, {"n_u", d.n_u}, {"n_w", d.n_w}, {"n_slack", d.n_slack}, {"K", d.K}, {"R", d.R}, {"n_knots", d.n_knots}}},
          {"config", {{"variant", to_string(c.variant)}, {"kappa", c.kappa}, {"alpha", c.alpha}, {"dt_ref", c.dt_ref},
                      {"encoder_span", c.encoder_span}, {"latent_span", c.latent_span}, {"knot_lo", c.knot_lo},
                      {"knot_hi", c.knot_hi}, {"hurdle_threshold", c.hurdle_threshold}, {"hurdle", c.hurdle}}},
          {"names", {{"obs", mp.names.obs}, {"controls", mp.names.controls}, {"disturbances", mp.names.disturbances}}},
          {"scales", {{"obs", to_json(mp.obs_scale)}, {"u", to_json(mp.u_scale)}, {"w", to_json(mp.w_scale)}}},
          {"meta", {{"seed", mp.meta.seed}, {"epochs", mp.meta.epochs}, {"final_loss", detail::num(mp.meta.final_loss)},
                    {"converged", mp.meta.converged}, {"data_hash", mp.meta.data_hash}}},
          {"theta", mp.theta}};
}

inline ModelParams model_from_json(const json& j) {
  detail::expect_format(j, kModelFormat);
  ModelDims d;
  const auto& jd = j.at("dims");
  d.n_obs = jd.at("n_obs");
  d.n_u = jd.at("n_u");
  d.n_w = jd.at("n_w");
  d.n_slack = jd.at("n_slack");
  d.K = jd.at("K");
  d.R = jd.at("R");
  d.n_knots = jd.at("n_knots");
  ModelConfig c;
  const auto& jc = j.at("config");
  c.variant = variant_from_string(jc.at("variant"));
  c.kappa = jc.at("kappa");
  c.alpha = jc.at("alpha");
  c.dt_ref = jc.at("dt_ref");
  c.encoder_span = jc.at("encoder_span");
  c.latent_span = jc.at("latent_span");
  c.knot_lo = jc.at("knot_lo");
  c.knot_hi = jc.at("knot_hi");
  c.hurdle_threshold = jc.at("hurdle_threshold");
  c.hurdle = jc.at("hurdle").get<std::vector<bool>>();
  auto mp = init_params(d, c, 0);
  mp.id = j.at("id").get<std::string>();
  mp.names.obs = j.at("names").at("obs").get<std::vector<std::string>>();
  mp.names.controls = j.at("names").at("controls").get<std::vector<std::string>>();
  mp.names.disturbances = j.at("names").at("disturbances").get<std::vector<std::string>>();
  mp.obs_scale = standardizer_from_json(j.at("scales").at("obs"));
  mp.u_scale = standardizer_from_json(j.at("scales").at("u"));
  mp.w_scale = standardizer_from_json(j.at("scales").at("w"));
  const auto& m = j.at("meta");
  mp.meta.seed = m.at("seed");
  mp.meta.epochs = m.at("epochs");
  mp.meta.final_loss = detail::num_or(m.at("final_loss"), std::nan(""));
  mp.meta.converged = m.at("converged");
  mp.meta.data_hash = m.at("data_hash").get<std::string>();
  auto theta = j.at("theta").get<std::vector<double>>();
  if (theta.size() != mp.theta.size())
    throw DocumentError("checkpoint has " + std::to_string(theta.size()) + " parameters; its dimensions need " +
                        std::to_string(mp.theta.size()));
  mp.theta = std::move(theta);
  if (mp.obs_scale.mean.size() != static_cast<std::size_t>(d.n_obs) || mp.u_scale.mean.size() != static_cast<std::size_t>(d.n_u) ||
      mp.w_scale.mean.size() != static_cast<std::size_t>(d.n_w))
    throw DocumentError("checkpoint scales do not match its dimensions");
  return mp;
}

// ---------------------------------------------------------------------------
// Calibration blocks

inline json to_json(const ValidityConfig& c) {
  return {{"alpha", c.alpha}, {"region_alpha", c.region_alpha}, {"k", c.k}, {"w_ctx", c.w_ctx}, {"w_act", c.w_act},
          {"n_cuts", c.n_cuts}, {"upper_quantile_statistic", c.upper_quantile_statistic},
          {"statistic_quantile", c.statistic_quantile}};
}

inline ValidityConfig validity_config_from_json(const json& j) {
  ValidityConfig c;
  c.alpha = j.value("alpha", c.alpha);
  c.region_alpha = j.value("region_alpha", c.region_alpha);
  c.k = j.value("k", c.k);
  c.w_ctx = j.value("w_ctx", c.w_ctx);
  c.w_act = j.value("w_act", c.w_act);
  c.n_cuts = j.value("n_cuts", c.n_cuts);
  c.upper_quantile_statistic = j.value("upper_quantile_statistic", c.upper_quantile_statistic);
  c.statistic_quantile = j.value("statistic_quantile", c.statistic_quantile);
  return c;
}

inline json to_json(const CalibrationBlock& c) {
  return {{"format", kCalibrationFormat},
          {"id", c.id},
          {"version", c.version},
          {"model_id", c.model_id},
          {"config", to_json(c.config)},
          {"ctx_scale", {{"mean", c.ctx_scale.mean}, {"sd", c.ctx_scale.sd}}},
          {"act_scale", {{"mean", c.act_scale.mean}, {"sd", c.act_scale.sd}}},
          {"ctx", c.ctx},
          {"act", c.act},
          {"support", c.support},
          {"orbit", c.orbit},
          {"q_support", c.q_support},
          {"region_support", c.region_support},
          {"region_orbit", c.region_orbit}};
}

inline CalibrationBlock calibration_from_json(const json& j) {
  detail::expect_format(j, kCalibrationFormat);
  CalibrationBlock c;
  c.id = j.at("id").get<std::string>();
  c.version = j.at("version").get<std::string>();
  c.model_id = j.at("model_id").get<std::string>();
  c.config = validity_config_from_json(j.at("config"));
  c.ctx_scale = FeatureScaler{j.at("ctx_scale").at("mean").get<std::vector<double>>(), j.at("ctx_scale").at("sd").get<std::vector<double>>()};
  c.act_scale = FeatureScaler{j.at("act_scale").at("mean").get<std::vector<double>>(), j.at("act_scale").at("sd").get<std::vector<double>>()};
  c.ctx = j.at("ctx").get<std::vector<std::vector<double>>>();
  c.act = j.at("act").get<std::vector<std::vector<double>>>();
  c.support = j.at("support").get<std::vector<double>>();
  c.orbit = j.at("orbit").get<std::vector<double>>();
  c.q_support = j.at("q_support");
  c.region_support = j.at("region_support");
  c.region_orbit = j.at("region_orbit");
  if (c.ctx.size() != c.act.size() || c.ctx.size() != c.support.size() || c.config.k > c.size())
    throw DocumentError("calibration block arrays are inconsistent");
  return c;
}

// ---------------------------------------------------------------------------
// Decisions

inline json to_json(const Partition& p) { return p.cuts; }

inline json to_json(const PartitionOutcome& o) {
  return {{"cuts", o.partition.cuts}, {"peak", detail::num(o.peak)}, {"margin", detail::num(o.margin)},
          {"peak_at", o.peak_at}, {"diverged", o.diverged}};
}

inline json to_json(const ChannelAttribution& c) {
  return {{"channel", c.channel}, {"contribution", c.contribution}, {"top_driver", c.top_driver}, {"driver_weight", c.driver_weight}};
}

inline json to_json(const WitnessPayload& w) {
  json ch = json::array();
  for (const auto& c : w.channels) ch.push_back(to_json(c));
  return {{"pi_star", w.pi_star.cuts}, {"peak_at", w.peak_at}, {"peak", detail::num(w.peak)}, {"regime", w.regime},
          {"channels", ch}, {"channel_shares", w.channel_shares}};
}

inline json to_json(const Decision& d) {
  json orbit = json::array();
  for (const auto& o : d.orbit) orbit.push_back(to_json(o));
  return {{"format", kDecisionFormat},
          {"scenario_id", d.scenario_id},
          {"outcome", to_string(d.outcome)},
          {"supported", d.supported},
          {"raw_safe", d.raw_safe},
          {"defect", d.defect},
          {"in_region", d.in_region},
          {"diverged", d.diverged},
          {"raw_unsafe_flag", d.raw_unsafe_flag},
          {"support", {{"ctx", d.support.ctx}, {"act", d.support.act}, {"supp", d.support.supp}, {"joint", d.support.joint}}},
          {"phi_orbit", detail::num(d.phi_orbit)},
          {"phi_self", detail::num(d.phi_self)},
          {"raw_peak", detail::num(d.raw_peak)},
          {"raw_margin", detail::num(d.raw_margin)},
          {"tau", d.tau},
          {"orbit", orbit},
          {"witness", d.witness ? to_json(*d.witness) : json(nullptr)},
          {"calibration", {{"id", d.calibration_id}, {"version", d.calibration_version}}},
          {"model_id", d.model_id},
          {"requested_at", d.requested_at}};
}

/// Canonical text of a decision document: sorted keys, no whitespace,
/// shortest round-trip numbers.
inline std::string canonical(const json& j) { return j.dump(); }

// ---------------------------------------------------------------------------
// Files

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DocumentError("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw DocumentError("'" + path + "' is not valid JSON: " + e.what());
  }
}

inline void write_json_file(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw DocumentError("cannot write '" + path + "'");
  out << j.dump(1) << '\n';
}

}  // namespace ccssix
