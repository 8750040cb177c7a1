// Screening service: artifact registry, screen responses, the append-only
// decision log and the HTTP surface. The CLI and the HTTP handlers call the
// same functions, so a scenario screened either way yields the same bytes.
#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <shared_mutex>
#include <string>

#include "ccssix/checkpoint.hpp"
#include "ccssix/interpret.hpp"

// After Eigen: <resolv.h>, pulled in by httplib, defines a macro `_res`.
#include <httplib.h>

namespace ccssix {

inline constexpr const char* kScreenResponseFormat = "ccssix.screen-response/1";
inline constexpr const char* kLogRecordFormat = "ccssix.log-record/1";
inline constexpr const char* kErrorFormat = "ccssix.error/1";
inline constexpr int kMaxHorizon = 2048;

/// Request-level failure with the HTTP status it maps to.
class ServiceError : public std::runtime_error {
 public:
  ServiceError(int status, const std::string& msg) : std::runtime_error(msg), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

inline json error_document(const std::string& msg) { return {{"format", kErrorFormat}, {"error", msg}}; }

// ---------------------------------------------------------------------------
// Trajectory documents

/// Predictive mean and 5/95% quantiles for every observed variable, plus the
/// regime and segment of each step.
inline json trajectory_json(const ModelParams& mp, const Trajectory& tr) {
  json vars = json::object();
  const int steps = static_cast<int>(tr.dist.size());
  for (int i = 0; i < tr.n_obs; ++i) {
    json mean = json::array(), lo = json::array(), hi = json::array();
    for (int t = 0; t < steps; ++t) {
      mean.push_back(detail::num(tr.mean_at(t, i)));
      lo.push_back(detail::num(tr.quantile_at(t, i, 0.05)));
      hi.push_back(detail::num(tr.quantile_at(t, i, 0.95)));
    }
    vars[latent_name(mp, i)] = {{"mean", mean}, {"q05", lo}, {"q95", hi}};
  }
  json regime = json::array();
  for (int t = 0; t < steps; ++t) regime.push_back(tr.regime_at(t));
  return {{"cuts", tr.partition.cuts}, {"steps", steps}, {"diverged", tr.diverged}, {"diverged_at", tr.diverged_at},
          {"variables", vars}, {"regime", regime}, {"segment", tr.segment}};
}

inline void check_horizon(const Scenario& s) {
  if (static_cast<int>(s.inputs.horizon()) > kMaxHorizon)
    throw ServiceError(413, "scenario horizon " + std::to_string(s.inputs.horizon()) + " exceeds the limit of " +
                                std::to_string(kMaxHorizon) + " steps");
}

/// Decision plus the raw and event-aligned trajectories and the channel
/// decomposition at the raw rollout's peak.
inline json screen_response(const Scenario& s, const ModelParams& mp, const CalibrationBlock& cal) {
  check_horizon(s);
  const auto d = decide(s, mp, cal);
  OrbitEvaluator ev(mp, s, cal.config);
  json trajs = json::array();
  std::optional<Trajectory> raw;
  for (const auto& o : d.orbit) {
    auto tr = ev.trajectory(o.partition);
    trajs.push_back(trajectory_json(mp, tr));
    if (!raw) raw = std::move(tr);
  }
  json peak = nullptr;
  if (raw && !raw->dist.empty()) peak = to_json(witness_payload(mp, *raw, s.target));
  return {{"format", kScreenResponseFormat},
          {"decision", to_json(d)},
          {"target", latent_name(mp, s.target)},
          {"trajectories", trajs},
          {"channels_at_peak", peak}};
}

// ---------------------------------------------------------------------------
// Model inspection documents

inline json model_summary(const ModelParams& mp) {
  return {{"id", mp.id},
          {"variant", to_string(mp.config.variant)},
          {"K", mp.dims.K},
          {"latent", [&] {
             json a = json::array();
             for (int i = 0; i < mp.dims.dz(); ++i) a.push_back(latent_name(mp, i));
             return a;
           }()},
          {"controls", mp.names.controls},
          {"disturbances", mp.names.disturbances},
          {"meta", {{"seed", mp.meta.seed}, {"epochs", mp.meta.epochs}, {"data_hash", mp.meta.data_hash}}}};
}

inline std::vector<double> reference_context(const ModelParams& mp) {
  return std::vector<double>(static_cast<std::size_t>(mp.dims.d_gamma()), 0.0);
}

inline json matrix_json(const Matrix& M) {
  json r = json::array();
  for (int i = 0; i < M.rows; ++i) {
    json row = json::array();
    for (int j = 0; j < M.cols; ++j) row.push_back(M(i, j));
    r.push_back(std::move(row));
  }
  return r;
}

/// Per-regime state/control/disturbance matrices at the reference context
/// (gamma = 0) with the strongest state edges named.
inline json model_channels(const ModelParams& mp, int n_edges = 10) {
  std::vector<std::string> latent;
  for (int i = 0; i < mp.dims.dz(); ++i) latent.push_back(latent_name(mp, i));
  json regimes = json::array();
  const auto g = reference_context(mp);
  for (int k = 0; k < mp.dims.K; ++k) {
    const auto M = regime_matrices(mp, k, g);
    Matrix absA(M.A.rows, M.A.cols);
    for (std::size_t i = 0; i < M.A.data.size(); ++i) absA.data[i] = std::fabs(M.A.data[i]);
    json edges = json::array();
    for (const auto& e : top_edges(absA, k, n_edges, latent))
      edges.push_back({{"affected", e.affected_name}, {"cause", e.cause_name}, {"weight", e.weight}, {"pct_of_row_max", e.pct_of_row_max}});
    regimes.push_back({{"regime", k}, {"state", matrix_json(M.A)}, {"control", matrix_json(M.B)},
                       {"disturbance", matrix_json(M.E)}, {"top_state_edges", edges}});
  }
  return {{"format", "ccssix.channels/1"}, {"model_id", mp.id}, {"context", "reference"}, {"latent", latent},
          {"controls", mp.names.controls}, {"disturbances", mp.names.disturbances}, {"regimes", regimes}};
}

/// Eigenmode timescales per regime at the reference context.
inline json model_regimes(const ModelParams& mp) {
  json regimes = json::array();
  const auto g = reference_context(mp);
  for (int k = 0; k < mp.dims.K; ++k) {
    json modes = json::array();
    for (const auto& m : eigenmode_timescales(mp, k, g))
      modes.push_back({{"re", m.eigenvalue.real()}, {"im", m.eigenvalue.imag()}, {"modulus", m.modulus},
                       {"tau", detail::num(m.tau)}, {"decaying", m.decaying}});
    regimes.push_back({{"regime", k}, {"modes", modes}});
  }
  return {{"format", "ccssix.regimes/1"}, {"model_id", mp.id}, {"kappa", mp.config.kappa}, {"dt_ref", mp.config.dt_ref},
          {"regimes", regimes}};
}

/// Learned shape response of one variable in every regime over the knot span.
inline json model_curves(const ModelParams& mp, const std::string& var, int points = 61) {
  const int v = shape_variable(mp, var);
  std::vector<double> grid;
  for (int i = 0; i < points; ++i)
    grid.push_back(mp.config.knot_lo + (mp.config.knot_hi - mp.config.knot_lo) * i / (points - 1));
  json curves = json::array();
  for (int k = 0; k < mp.dims.K; ++k) {
    const auto c = response_curve(mp, k, v, grid);
    curves.push_back({{"regime", k}, {"value", c.value}, {"loading_norm", c.loading_norm}});
  }
  return {{"format", "ccssix.curves/1"}, {"model_id", mp.id}, {"variable", var}, {"grid", grid}, {"curves", curves}};
}

// ---------------------------------------------------------------------------
// Registry

/// Models and calibration blocks keyed by id. Registration takes the write
/// lock; lookups share it. Entries are immutable once registered.
class Registry {
 public:
  void add_model(ModelParams mp) {
    std::unique_lock lock(mu_);
    auto p = std::make_shared<const ModelParams>(std::move(mp));
    models_[p->id] = p;
  }
  void add_calibration(CalibrationBlock c) {
    std::unique_lock lock(mu_);
    auto p = std::make_shared<const CalibrationBlock>(std::move(c));
    cals_[p->id] = p;
  }
  std::shared_ptr<const ModelParams> model(const std::string& id) const {
    std::shared_lock lock(mu_);
    auto it = models_.find(id);
    if (it == models_.end()) throw ServiceError(404, "unknown model '" + id + "'");
    return it->second;
  }
  std::shared_ptr<const CalibrationBlock> calibration(const std::string& id) const {
    std::shared_lock lock(mu_);
    auto it = cals_.find(id);
    if (it == cals_.end()) throw ServiceError(404, "unknown calibration '" + id + "'");
    return it->second;
  }
  std::vector<std::shared_ptr<const ModelParams>> models() const {
    std::shared_lock lock(mu_);
    std::vector<std::shared_ptr<const ModelParams>> out;
    for (const auto& [id, m] : models_) out.push_back(m);
    return out;
  }

  /// Loads every *.json document in `dir` whose format is a model or a
  /// calibration block; other files are ignored.
  void load_directory(const std::string& dir) {
    if (!std::filesystem::is_directory(dir)) throw DocumentError("artifact directory '" + dir + "' does not exist");
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir))
      if (e.path().extension() == ".json") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      const auto j = read_json_file(f.string());
      if (!j.is_object() || !j.contains("format")) continue;
      const auto fmt = j.at("format").get<std::string>();
      if (fmt == kModelFormat) add_model(model_from_json(j));
      if (fmt == kCalibrationFormat) add_calibration(calibration_from_json(j));
    }
  }

 private:
  mutable std::shared_mutex mu_;
  std::map<std::string, std::shared_ptr<const ModelParams>> models_;
  std::map<std::string, std::shared_ptr<const CalibrationBlock>> cals_;
};

// ---------------------------------------------------------------------------
// Decision log

/// One line per screened scenario: the request (scenario document, model
/// and calibration ids) and the full response. Lines are only appended.
class DecisionLog {
 public:
  explicit DecisionLog(std::string path = {}) : path_(std::move(path)) {
    if (path_.empty() || !std::filesystem::exists(path_)) return;
    std::ifstream in(path_);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      json r;
      try {
        r = json::parse(line);
      } catch (const json::parse_error&) {
        throw DocumentError("decision log '" + path_ + "' line " + std::to_string(lineno) + " is not valid JSON");
      }
      detail::expect_format(r, kLogRecordFormat);
      index(r);
      records_.push_back(std::move(r));
    }
  }

  static std::string key(const std::string& scenario, const std::string& model, const std::string& cal) {
    return scenario + '\x1f' + model + '\x1f' + cal;
  }

  std::optional<json> find(const std::string& k) const {
    std::lock_guard lock(mu_);
    auto it = by_key_.find(k);
    if (it == by_key_.end()) return std::nullopt;
    return std::optional<json>(std::in_place, records_[it->second]);
  }

  /// Appends and returns the stored record; an existing record with the same
  /// key is returned unchanged.
  json append(const json& scenario_doc, const std::string& model_id, const std::string& cal_id, const std::string& cal_version,
              const json& response) {
    std::lock_guard lock(mu_);
    const auto k = key(scenario_doc.value("id", std::string()), model_id, cal_id);
    if (auto it = by_key_.find(k); it != by_key_.end()) return records_[it->second];
    json r = {{"format", kLogRecordFormat},
              {"seq", static_cast<long long>(records_.size())},
              {"scenario", scenario_doc},
              {"model_id", model_id},
              {"calibration_id", cal_id},
              {"calibration_version", cal_version},
              {"response", response}};
    if (!path_.empty()) {
      std::ofstream out(path_, std::ios::app);
      if (!out) throw DocumentError("cannot append to decision log '" + path_ + "'");
      out << canonical(r) << '\n';
      out.flush();
      if (!out) throw DocumentError("write to decision log '" + path_ + "' failed");
    }
    index(r);
    records_.push_back(r);
    return r;
  }

  std::vector<json> since(long long seq) const {
    std::lock_guard lock(mu_);
    std::vector<json> out;
    for (const auto& r : records_)
      if (r.at("seq").get<long long>() >= seq) out.push_back(r);
    return out;
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return records_.size();
  }

 private:
  void index(const json& r) {
    by_key_[key(r.at("scenario").value("id", std::string()), r.at("model_id").get<std::string>(),
                r.at("calibration_id").get<std::string>())] = records_.size();
  }

  std::string path_;
  mutable std::mutex mu_;
  std::vector<json> records_;
  std::map<std::string, std::size_t> by_key_;
};

// ---------------------------------------------------------------------------
// Service

class Service {
 public:
  Service(std::shared_ptr<Registry> reg, std::shared_ptr<DecisionLog> log) : reg_(std::move(reg)), log_(std::move(log)) {}

  Registry& registry() { return *reg_; }
  DecisionLog& log() { return *log_; }

  /// Screens a scenario document. Idempotent per (scenario id, model id,
  /// calibration id): a repeat returns the logged response; reusing a key
  /// with a different scenario is rejected.
  json screen(const json& scenario_doc, const std::string& model_id, const std::string& cal_id) {
    const auto mp = reg_->model(model_id);
    const auto cal = reg_->calibration(cal_id);
    if (cal->model_id != mp->id)
      throw ServiceError(409, "calibration '" + cal_id + "' belongs to model '" + cal->model_id + "', not '" + model_id + "'");
    Scenario s;
    try {
      s = scenario_from_json(scenario_doc, mp->names.obs);
    } catch (const ServiceError&) {
      throw;
    } catch (const std::exception& e) {
      throw ServiceError(400, std::string("invalid scenario: ") + e.what());
    }
    if (s.id.empty()) throw ServiceError(400, "scenario documents need an id");
    if (s.history.n_obs != mp->dims.n_obs || s.inputs.n_u != mp->dims.n_u || s.inputs.n_w != mp->dims.n_w)
      throw ServiceError(400, "scenario dimensions do not match model '" + model_id + "'");
    const auto k = DecisionLog::key(s.id, model_id, cal_id);
    if (const auto r = log_->find(k)) {
      if (canonical(r->at("scenario")) != canonical(scenario_doc))
        throw ServiceError(409, "scenario id '" + s.id + "' was already screened with different content");
      return r->at("response");
    }
    auto resp = screen_response(s, *mp, *cal);
    return log_->append(scenario_doc, model_id, cal_id, cal->version, resp).at("response");
  }

  /// Recomputes every logged response; returns the sequence numbers whose
  /// recomputation differs from the stored bytes.
  std::vector<long long> replay() const {
    std::vector<long long> bad;
    for (const auto& r : log_->since(0)) {
      const auto mp = reg_->model(r.at("model_id").get<std::string>());
      const auto cal = reg_->calibration(r.at("calibration_id").get<std::string>());
      const auto s = scenario_from_json(r.at("scenario"), mp->names.obs);
      if (canonical(screen_response(s, *mp, *cal)) != canonical(r.at("response"))) bad.push_back(r.at("seq").get<long long>());
    }
    return bad;
  }

 private:
  std::shared_ptr<Registry> reg_;
  std::shared_ptr<DecisionLog> log_;
};

// ---------------------------------------------------------------------------
// HTTP

namespace detail {

inline void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(canonical(body), "application/json");
}

template <class F>
void guarded(httplib::Response& res, F&& f) {
  try {
    reply(res, 200, f());
  } catch (const ServiceError& e) {
    reply(res, e.status(), error_document(e.what()));
  } catch (const json::exception& e) {
    reply(res, 400, error_document(std::string("malformed request: ") + e.what()));
  } catch (const DocumentError& e) {
    reply(res, 400, error_document(e.what()));
  } catch (const std::invalid_argument& e) {
    reply(res, 404, error_document(e.what()));
  } catch (const std::exception& e) {
    reply(res, 500, error_document(e.what()));
  }
}

}  // namespace detail

/// Registers the endpoints on `svr`. The screen request body is
/// {"scenario": <scenario document>, "model_id": ..., "calibration_id": ...}.
inline void install_routes(httplib::Server& svr, Service& service) {
  svr.Post("/scenarios/screen", [&service](const httplib::Request& req, httplib::Response& res) {
    detail::guarded(res, [&] {
      const auto body = json::parse(req.body);
      return service.screen(body.at("scenario"), body.at("model_id").get<std::string>(), body.at("calibration_id").get<std::string>());
    });
  });
  svr.Get("/models", [&service](const httplib::Request&, httplib::Response& res) {
    detail::guarded(res, [&] {
      json a = json::array();
      for (const auto& m : service.registry().models()) a.push_back(model_summary(*m));
      return json{{"format", "ccssix.models/1"}, {"models", a}};
    });
  });
  svr.Get(R"(/models/([^/]+)/channels)", [&service](const httplib::Request& req, httplib::Response& res) {
    detail::guarded(res, [&] { return model_channels(*service.registry().model(req.matches[1])); });
  });
  svr.Get(R"(/models/([^/]+)/regimes)", [&service](const httplib::Request& req, httplib::Response& res) {
    detail::guarded(res, [&] { return model_regimes(*service.registry().model(req.matches[1])); });
  });
  svr.Get(R"(/models/([^/]+)/curves/([^/]+))", [&service](const httplib::Request& req, httplib::Response& res) {
    detail::guarded(res, [&] { return model_curves(*service.registry().model(req.matches[1]), req.matches[2]); });
  });
  svr.Get(R"(/calibrations/([^/]+))", [&service](const httplib::Request& req, httplib::Response& res) {
    detail::guarded(res, [&] { return to_json(*service.registry().calibration(req.matches[1])); });
  });
  svr.Get("/decisions", [&service](const httplib::Request& req, httplib::Response& res) {
    detail::guarded(res, [&] {
      long long since = 0;
      if (req.has_param("since")) {
        try {
          since = std::stoll(req.get_param_value("since"));
        } catch (const std::exception&) {
          throw ServiceError(400, "'since' must be an integer sequence number");
        }
      }
      return json{{"format", "ccssix.decisions/1"}, {"since", since}, {"records", service.log().since(since)}};
    });
  });
}

}  // namespace ccssix
