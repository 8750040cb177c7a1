// ccssix command-line tool: train, simulate, calibrate, screen, eval, serve.
#include <csignal>
#include <iostream>

#include <CLI11.hpp>

#include "ccssix/ccssix.hpp"

using namespace ccssix;

namespace {

struct Failure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

json load_document(const std::string& path, const std::string& what, const std::string& hint) {
  if (!std::filesystem::exists(path)) throw Failure(what + " '" + path + "' not found; " + hint);
  return read_json_file(path);
}

ModelParams load_model(const std::string& path) {
  return model_from_json(load_document(path, "model checkpoint", "create one with `ccssix train --data ... --config ... --out " + path + "`"));
}

CalibrationBlock load_calibration(const std::string& path) {
  return calibration_from_json(
      load_document(path, "calibration block", "create one with `ccssix calibrate --model ... --cal-data ... --out " + path + "`"));
}

ColumnRoles column_roles(const json& cfg) {
  if (!cfg.contains("columns")) throw Failure("config needs a \"columns\" object with obs, controls and disturbances");
  const auto& c = cfg.at("columns");
  return ColumnRoles{c.at("obs").get<std::vector<std::string>>(), c.value("controls", std::vector<std::string>{}),
                     c.value("disturbances", std::vector<std::string>{})};
}

SeriesBlock load_series(const std::string& path, const ColumnRoles& roles) {
  if (!std::filesystem::exists(path)) throw Failure("data file '" + path + "' not found");
  return read_series_csv(path, roles);
}

void write_or_print(const std::string& out, const json& doc) {
  if (out.empty()) {
    std::cout << doc.dump(1) << '\n';
  } else {
    write_json_file(out, doc);
    std::cerr << "wrote " << out << '\n';
  }
}

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (!tok.empty()) out.push_back(std::stoull(tok));
  if (out.empty()) throw Failure("--seeds needs at least one seed");
  return out;
}

// --- train ------------------------------------------------------------------

int cmd_train(const std::string& data_path, const std::string& cfg_path, std::uint64_t seed, const std::string& out,
              const std::string& log_path) {
  const auto cfg = load_document(cfg_path, "training config", "see docs/interface.md for its fields");
  const auto roles = column_roles(cfg);
  const auto data = load_series(data_path, roles);
  FitConfig fc;
  fc.variant = variant_from_string(cfg.value("variant", std::string("adaptive")));
  fc.epochs = cfg.value("epochs", fc.epochs);
  fc.history_length = cfg.value("history", fc.history_length);
  fc.window_length = cfg.value("horizon", fc.window_length);
  fc.max_windows_per_epoch = cfg.value("windows_per_epoch", fc.max_windows_per_epoch);
  fc.batch_size = cfg.value("batch_size", fc.batch_size);
  fc.learning_rate = cfg.value("learning_rate", fc.learning_rate);
  fc.semigroup_weight = cfg.value("semigroup_weight", fc.semigroup_weight);
  fc.max_wall_seconds = cfg.value("max_wall_seconds", fc.max_wall_seconds);
  fc.dims.K = cfg.value("K", fc.dims.K);
  fc.dims.R = cfg.value("R", fc.dims.R);
  fc.dims.n_slack = cfg.value("n_slack", fc.dims.n_slack);
  fc.model.kappa = cfg.value("kappa", fc.model.kappa);
  fc.names = VariableNames{roles.obs, roles.controls, roles.disturbances};
  fc.log_path = log_path;
  const auto split = SplitSpec::fractions(data.length(), cfg.value("train_frac", 0.7), cfg.value("cal_frac", 0.15));
  const auto hurdle = cfg.value("hurdle", std::vector<bool>{});
  auto res = fit(data, split, fc, seed, hurdle);
  res.params.id = cfg.value("model_id", std::string("model")) + "-s" + std::to_string(seed);
  if (!res.warning.empty()) std::cerr << "warning: " << res.warning << '\n';
  write_or_print(out, to_json(res.params));
  return 0;
}

// --- simulate -----------------------------------------------------------------

int cmd_simulate(const std::string& model_path, const std::string& scenario_path, const std::vector<int>& cuts,
                 const std::string& out) {
  const auto mp = load_model(model_path);
  const auto s = scenario_from_json(load_document(scenario_path, "scenario", "see docs/interface.md for the scenario document"),
                                    mp.names.obs);
  check_horizon(s);
  const auto tr = rollout(mp, s.history, s.inputs, Partition{cuts});
  auto doc = trajectory_json(mp, tr);
  doc["format"] = "ccssix.trajectory/1";
  doc["model_id"] = mp.id;
  doc["scenario_id"] = s.id;
  write_or_print(out, doc);
  return 0;
}

// --- calibrate ----------------------------------------------------------------

int cmd_calibrate(const std::string& model_path, const std::string& data_path, const std::string& cfg_path,
                  const std::string& out, const std::string& id) {
  const auto mp = load_model(model_path);
  json cfg = cfg_path.empty() ? json::object() : load_document(cfg_path, "calibration config", "see docs/interface.md");
  ColumnRoles roles{mp.names.obs, mp.names.controls, mp.names.disturbances};
  if (cfg.contains("columns")) roles = column_roles(cfg);
  const auto data = load_series(data_path, roles);
  const int history = cfg.value("history", 48), H = cfg.value("horizon", 16), n = cfg.value("windows", 64);
  int target = 0;
  if (cfg.contains("target")) {
    const auto t = cfg.at("target");
    target = t.is_string() ? shape_variable(mp, t.get<std::string>()) : t.get<int>();
  }
  ValidityConfig vc = cfg.contains("validity") ? validity_config_from_json(cfg.at("validity")) : ValidityConfig{};
  const auto windows = calibration_windows(data, Range{0, data.length()}, history, H, n, target);
  auto cal = calibrate(windows, mp, vc, id);
  cal.version = cfg.value("version", cal.version);
  write_or_print(out, to_json(cal));
  return 0;
}

// --- screen -------------------------------------------------------------------

int cmd_screen(const std::string& model_path, const std::string& cal_path, const std::string& scenario_path,
               const std::string& log_path, bool full) {
  auto reg = std::make_shared<Registry>();
  auto mp = load_model(model_path);
  auto cal = load_calibration(cal_path);
  const auto mid = mp.id, cid = cal.id;
  reg->add_model(std::move(mp));
  reg->add_calibration(std::move(cal));
  Service svc(reg, std::make_shared<DecisionLog>(log_path));
  const auto scen = load_document(scenario_path, "scenario", "see docs/interface.md for the scenario document");
  const auto resp = svc.screen(scen, mid, cid);
  std::cout << canonical(full ? resp : resp.at("decision")) << '\n';
  return 0;
}

// --- eval ---------------------------------------------------------------------

ModelParams plant_model(const PlantProtocol& p, const std::string& model_path, std::uint64_t seed) {
  if (!model_path.empty()) return load_model(model_path);
  std::cerr << "fitting plant model (seed " << seed << ")...\n";
  return fit_plant_model(p, seed);
}

std::string plant_data_hash(const PlantProtocol& p) { return hex(hash_series(plant_data(p))); }

int cmd_eval(const std::string& suite, const std::string& dir, const std::string& seeds_s, const std::string& model_path,
             const std::string& cal_path) {
  std::filesystem::create_directories(dir);
  if (suite == "synthetic") {
    SyntheticProtocol p;
    const auto seeds = parse_seeds(seeds_s.empty() ? "1,2,3" : seeds_s);
    const auto rows = run_synthetic(p, seeds);
    write_synthetic_csv(path_in(dir, "synthetic.csv"), rows);
    write_manifest(dir, suite, seeds, to_json(p), hex(hash_series(generate_lpv_series(p.system, p.length, p.data_seed))),
                   {"synthetic.csv"});
    for (const auto& r : rows) std::cout << r.seed << ' ' << to_string(r.variant) << " rmse " << r.metrics.rmse << '\n';
    return 0;
  }
  PlantProtocol p;
  const auto seeds = parse_seeds(seeds_s.empty() ? "1" : seeds_s);
  if (suite == "oracle-library") {
    const auto lib = generate_low_do_library(p.plant, p.library_size, p.library_seed);
    std::optional<ModelParams> mp;
    if (!model_path.empty()) mp = load_model(model_path);
    write_library_csv(path_in(dir, "oracle_library.csv"), lib, mp ? &*mp : nullptr);
    write_manifest(dir, suite, seeds, to_json(p), mp ? mp->meta.data_hash : std::string("-"), {"oracle_library.csv"});
    const auto [safe, unsafe] = frontier_medians(lib);
    std::cout << "median savings: safe " << safe << "% unsafe " << unsafe << "%\n";
    return 0;
  }
  if (suite == "witness-matrix") {
    const auto mp = plant_model(p, model_path, seeds.front());
    const auto lib = generate_low_do_library(p.plant, p.library_size, p.library_seed);
    const auto m = witness_matrix(mp, lib.scenarios, seeds.front(), p.validity);
    const auto tests = witness_tests(m, 0.01);
    write_witness_csv(dir, m, tests);
    write_manifest(dir, suite, seeds, to_json(p), plant_data_hash(p),
                   {"witness_matrix.csv", "witness_tests.csv", "witness_scenarios.csv"});
    for (const auto& f : m.families)
      std::cout << f.family << " prevented " << f.false_safe_prevented << "/" << m.pool_false_safe << '\n';
    return 0;
  }
  if (suite == "shadow") {
    const auto mp = plant_model(p, model_path, seeds.front());
    const auto cal = cal_path.empty() ? calibrate_plant(p, mp) : load_calibration(cal_path);
    const auto lib = generate_low_do_library(p.plant, p.library_size, p.library_seed);
    const auto sets = plant_failure_mode_sets(p.plant, lib.tau, p.failure_mode_seed, p.failure_mode_each);
    const auto r = run_shadow(mp, cal, sets, candidate_groups(p, lib.tau, p.failure_mode_seed + 1));
    write_shadow_csv(dir, r);
    write_manifest(dir, suite, seeds, to_json(p), plant_data_hash(p),
                   {"shadow_policies.csv", "shadow_chosen_actions.csv", "shadow_decisions.csv"});
    for (const auto& x : r.combined)
      std::cout << to_string(x.policy) << " acted " << x.acted() << " unsafe " << x.unsafe_acted() << " regret(c=4) "
                << regret(x, 4) << '\n';
    return 0;
  }
  throw Failure("unknown suite '" + suite + "'; expected synthetic, oracle-library, witness-matrix or shadow");
}

// --- serve --------------------------------------------------------------------

httplib::Server* g_server = nullptr;

int cmd_serve(const std::string& host, int port, const std::string& artifacts, const std::string& log_path) {
  auto reg = std::make_shared<Registry>();
  reg->load_directory(artifacts);
  Service svc(reg, std::make_shared<DecisionLog>(log_path));
  httplib::Server svr;
  install_routes(svr, svc);
  g_server = &svr;
  std::signal(SIGINT, [](int) {
    if (g_server) g_server->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (g_server) g_server->stop();
  });
  std::cerr << "serving " << reg->models().size() << " model(s) on " << host << ':' << port << '\n';
  if (!svr.listen(host, port)) throw Failure("cannot listen on " + host + ":" + std::to_string(port));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ccssix: context-conditioned structured simulator and scenario screening"};
  app.require_subcommand(1);

  std::string data, config, out, log, model, cal, scenario, suite, seeds, host = "127.0.0.1", artifacts = ".", id = "cal";
  std::uint64_t seed = 1;
  int port = 8080;
  bool full = false;
  std::vector<int> cuts;

  auto* train = app.add_subcommand("train", "fit a model and write its checkpoint");
  train->add_option("--data", data, "CSV time series")->required();
  train->add_option("--config", config, "training config (JSON)")->required();
  train->add_option("--seed", seed, "fit seed");
  train->add_option("--out", out, "checkpoint path (stdout if omitted)");
  train->add_option("--log", log, "line-delimited fit log");

  auto* sim = app.add_subcommand("simulate", "roll out a scenario and print its trajectory");
  sim->add_option("--model", model)->required();
  sim->add_option("--scenario", scenario)->required();
  sim->add_option("--cuts", cuts, "partition cut indices")->delimiter(',');
  sim->add_option("--out", out);

  auto* calib = app.add_subcommand("calibrate", "build a calibration block from held-out data");
  calib->add_option("--model", model)->required();
  calib->add_option("--cal-data", data, "CSV time series")->required();
  calib->add_option("--config", config, "calibration config (JSON)");
  calib->add_option("--id", id, "calibration id");
  calib->add_option("--out", out);

  auto* screen = app.add_subcommand("screen", "screen a scenario; prints the decision and logs it");
  screen->add_option("--model", model)->required();
  screen->add_option("--cal", cal)->required();
  screen->add_option("--scenario", scenario)->required();
  std::string screen_log = "decisions.jsonl";
  screen->add_option("--log", screen_log, "decision log (appended)");
  screen->add_flag("--full", full, "print the full screen response instead of the decision");

  auto* ev = app.add_subcommand("eval", "run an evaluation suite and write result CSVs");
  ev->add_option("--suite", suite)->required()->check(CLI::IsMember({"synthetic", "oracle-library", "witness-matrix", "shadow"}));
  std::string eval_dir = "results";
  ev->add_option("--out", eval_dir, "output directory");
  ev->add_option("--seeds", seeds, "comma-separated seeds");
  ev->add_option("--model", model, "plant model checkpoint (fitted if omitted)");
  ev->add_option("--cal", cal, "calibration block (shadow; built if omitted)");

  auto* serve = app.add_subcommand("serve", "serve the HTTP endpoints");
  serve->add_option("--port", port);
  serve->add_option("--host", host);
  serve->add_option("--artifacts", artifacts, "directory of model and calibration documents");
  std::string serve_log = "decisions.jsonl";
  serve->add_option("--log", serve_log, "decision log (appended)");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train) return cmd_train(data, config, seed, out, log);
    if (*sim) return cmd_simulate(model, scenario, cuts, out);
    if (*calib) return cmd_calibrate(model, data, config, out, id);
    if (*screen) return cmd_screen(model, cal, scenario, screen_log, full);
    if (*ev) return cmd_eval(suite, eval_dir, seeds, model, cal);
    if (*serve) return cmd_serve(host, port, artifacts, serve_log);
  } catch (const ServiceError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
