#include <cstdio>
#include <filesystem>
#include <fstream>
#include <thread>

#include "catch_amalgamated.hpp"
#include "ccssix/ccssix.hpp"
#include "helpers.hpp"

using namespace ccssix;
namespace fs = std::filesystem;

namespace {

ModelParams named_model(const std::string& id = "m1", std::uint64_t seed = 3) {
  auto mp = testutil::random_params(testutil::small_dims(2, 1, 1), seed, 0.05);
  mp.id = id;
  mp.names = VariableNames{{"x", "s"}, {"u"}, {"w"}};
  mp.obs_scale = Standardizer{{0.5, -0.2}, {2.0, 1.5}};
  mp.meta.seed = seed;
  mp.meta.data_hash = "abc";
  return mp;
}

CalibrationBlock small_calibration(const ModelParams& mp, const std::string& id = "c1") {
  const auto data = testutil::random_series(2, 1, 1, 400, 21, 0.0);
  auto cal = calibrate(calibration_windows(data, Range{0, 400}, 32, 12, 40, 0), mp, ValidityConfig{}, id);
  cal.version = "7";
  return cal;
}

Scenario scenario(const std::string& id, std::uint64_t seed, int H = 12, double tau = 0.4) {
  Scenario s;
  s.id = id;
  s.history = testutil::random_series(2, 1, 1, 32, seed);
  s.inputs = testutil::random_inputs(1, 1, H, seed + 1);
  s.tau = tau;
  s.target = 0;
  return s;
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("ccssix-test-" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& f) const { return (path / f).string(); }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Running {
  httplib::Server svr;
  std::thread th;
  int port = 0;
  explicit Running(Service& s) {
    install_routes(svr, s);
    port = svr.bind_to_any_port("127.0.0.1");
    th = std::thread([this] { svr.listen_after_bind(); });
    svr.wait_until_ready();
  }
  ~Running() {
    svr.stop();
    th.join();
  }
};

std::shared_ptr<Registry> registry_with(const ModelParams& mp, const CalibrationBlock& cal) {
  auto reg = std::make_shared<Registry>();
  reg->add_model(mp);
  reg->add_calibration(cal);
  return reg;
}

}  // namespace

TEST_CASE("model checkpoint round trip") {
  const auto mp = named_model();
  const auto j = to_json(mp);
  const auto back = model_from_json(json::parse(j.dump()));
  CHECK(back.theta == mp.theta);
  CHECK(back.names.obs == mp.names.obs);
  CHECK(back.obs_scale.mean == mp.obs_scale.mean);
  CHECK(canonical(to_json(back)) == canonical(j));
  const auto s = scenario("r", 5);
  const auto a = rollout(mp, s.history, s.inputs, Partition{{4}});
  const auto b = rollout(back, s.history, s.inputs, Partition{{4}});
  CHECK(a.mean == b.mean);

  auto bad = j;
  bad["theta"].erase(0);
  CHECK_THROWS_AS(model_from_json(bad), DocumentError);
  bad = j;
  bad["format"] = "ccssix.model/9";
  CHECK_THROWS_AS(model_from_json(bad), DocumentError);
  CHECK_THROWS_AS(model_from_json(json{{"theta", json::array()}}), DocumentError);
}

TEST_CASE("calibration and scenario round trip") {
  const auto mp = named_model();
  const auto cal = small_calibration(mp);
  const auto back = calibration_from_json(json::parse(to_json(cal).dump()));
  CHECK(back.q_support == cal.q_support);
  CHECK(back.support == cal.support);
  CHECK(back.ctx == cal.ctx);

  auto s = scenario("sc", 9);
  s.history.m(3, 1) = false;
  const auto j = to_json(s);
  CHECK(j["history"]["obs"][3][1].is_null());
  const auto s2 = scenario_from_json(j);
  CHECK_FALSE(s2.history.m(3, 1));
  CHECK(s2.inputs.u == s.inputs.u);
  CHECK(s2.history.dt == s.history.dt);
  // identical decisions from the round-tripped artifacts
  CHECK(canonical(to_json(decide(s2, mp, back))) == canonical(to_json(decide(s, mp, cal))));

  auto named = j;
  named["target"] = "s";
  CHECK(scenario_from_json(named, mp.names.obs).target == 1);
  named["target"] = "nope";
  CHECK_THROWS_AS(scenario_from_json(named, mp.names.obs), DocumentError);
}

TEST_CASE("screen response carries the decision and every orbit trajectory") {
  const auto mp = named_model();
  const auto cal = small_calibration(mp);
  const auto s = scenario("a", 11);
  const auto r = screen_response(s, mp, cal);
  CHECK(r["format"] == kScreenResponseFormat);
  CHECK(canonical(r["decision"]) == canonical(to_json(decide(s, mp, cal))));
  CHECK(r["decision"]["calibration"]["version"] == "7");
  CHECK(r["trajectories"].size() == r["decision"]["orbit"].size());
  CHECK(r["trajectories"][0]["cuts"].empty());
  CHECK(r["trajectories"][0]["variables"]["x"]["mean"].size() == 12);
  CHECK(r["channels_at_peak"]["channels"].size() == 3);
  CHECK(r["target"] == "x");
}

TEST_CASE("screening is idempotent and logged once") {
  TempDir tmp;
  const auto mp = named_model();
  const auto cal = small_calibration(mp);
  auto log = std::make_shared<DecisionLog>(tmp / "log.jsonl");
  Service svc(registry_with(mp, cal), log);
  const auto doc = to_json(scenario("a", 11));
  const auto r1 = svc.screen(doc, "m1", "c1");
  const auto r2 = svc.screen(doc, "m1", "c1");
  CHECK(canonical(r1) == canonical(r2));
  CHECK(log->size() == 1);
  svc.screen(to_json(scenario("b", 12)), "m1", "c1");
  CHECK(log->size() == 2);

  // same id, different content
  try {
    svc.screen(to_json(scenario("a", 13)), "m1", "c1");
    FAIL("expected a conflict");
  } catch (const ServiceError& e) {
    CHECK(e.status() == 409);
  }
  // unknown artifacts, oversized horizon
  CHECK_THROWS_AS(svc.screen(doc, "nope", "c1"), ServiceError);
  try {
    svc.screen(to_json(scenario("big", 3, kMaxHorizon + 1)), "m1", "c1");
    FAIL("expected a size rejection");
  } catch (const ServiceError& e) {
    CHECK(e.status() == 413);
  }
  CHECK(log->size() == 2);
}

TEST_CASE("decision log is append-only and replays") {
  TempDir tmp;
  const auto mp = named_model();
  const auto cal = small_calibration(mp);
  const auto reg = registry_with(mp, cal);
  std::vector<std::string> first;
  {
    Service svc(reg, std::make_shared<DecisionLog>(tmp / "log.jsonl"));
    for (int i = 0; i < 4; ++i) first.push_back(canonical(svc.screen(to_json(scenario("s" + std::to_string(i), 30 + i)), "m1", "c1")));
  }
  const auto before = slurp(tmp / "log.jsonl");
  {
    // reopened log: prior lines untouched, repeats served from the log
    Service svc(reg, std::make_shared<DecisionLog>(tmp / "log.jsonl"));
    CHECK(svc.log().size() == 4);
    CHECK(canonical(svc.screen(to_json(scenario("s2", 32)), "m1", "c1")) == first[2]);
    svc.screen(to_json(scenario("s9", 39)), "m1", "c1");
    const auto after = slurp(tmp / "log.jsonl");
    CHECK(after.substr(0, before.size()) == before);
    CHECK(svc.replay().empty());
    const auto recs = svc.log().since(3);
    REQUIRE(recs.size() == 2);
    CHECK(recs[0]["seq"] == 3);
    CHECK(recs[1]["scenario"]["id"] == "s9");
  }
  {
    // a tampered record is caught by replay
    auto text = slurp(tmp / "log.jsonl");
    const auto pos = text.find("\"outcome\":\"");
    REQUIRE(pos != std::string::npos);
    const auto end = text.find('"', pos + 11);
    text.replace(pos + 11, end - pos - 11, text.compare(pos + 11, 6, "accept") == 0 ? "abstain" : "accept");
    std::ofstream(tmp / "log.jsonl") << text;
    Service svc(reg, std::make_shared<DecisionLog>(tmp / "log.jsonl"));
    CHECK(svc.replay() == std::vector<long long>{0});
  }
  std::ofstream(tmp / "broken.jsonl") << "{not json\n";
  CHECK_THROWS_AS(DecisionLog(tmp / "broken.jsonl"), DocumentError);
}

TEST_CASE("http endpoints") {
  TempDir tmp;
  const auto mp = named_model();
  const auto cal = small_calibration(mp);
  Service svc(registry_with(mp, cal), std::make_shared<DecisionLog>(tmp / "log.jsonl"));
  Running srv(svc);
  httplib::Client cli("127.0.0.1", srv.port);

  const auto doc = to_json(scenario("h1", 41));
  const json req{{"scenario", doc}, {"model_id", "m1"}, {"calibration_id", "c1"}};
  auto r = cli.Post("/scenarios/screen", req.dump(), "application/json");
  REQUIRE(r);
  CHECK(r->status == 200);
  const auto body = json::parse(r->body);
  CHECK(canonical(body) == canonical(screen_response(scenario_from_json(doc), mp, cal)));
  auto again = cli.Post("/scenarios/screen", req.dump(), "application/json");
  CHECK(again->body == r->body);

  r = cli.Get("/models");
  CHECK(json::parse(r->body)["models"][0]["id"] == "m1");
  r = cli.Get("/models/m1/channels");
  const auto ch = json::parse(r->body);
  CHECK(ch["regimes"].size() == 3);
  CHECK(ch["regimes"][0]["state"].size() == 4);
  CHECK(ch["regimes"][0]["control"][0].size() == 1);
  r = cli.Get("/models/m1/regimes");
  CHECK(json::parse(r->body)["regimes"][1]["modes"].size() == 4);
  r = cli.Get("/models/m1/curves/u");
  const auto cv = json::parse(r->body);
  CHECK(cv["grid"].size() == 61);
  CHECK(cv["curves"][2]["value"].size() == 61);
  r = cli.Get("/calibrations/c1");
  CHECK(canonical(json::parse(r->body)) == canonical(to_json(cal)));
  r = cli.Get("/decisions?since=0");
  CHECK(json::parse(r->body)["records"].size() == 1);
  r = cli.Get("/decisions?since=1");
  CHECK(json::parse(r->body)["records"].empty());

  CHECK(cli.Get("/models/zz/channels")->status == 404);
  CHECK(cli.Get("/models/m1/curves/zz")->status == 404);
  CHECK(cli.Get("/calibrations/zz")->status == 404);
  CHECK(cli.Get("/decisions?since=x")->status == 400);
  CHECK(cli.Post("/scenarios/screen", "{", "application/json")->status == 400);
  const auto err = cli.Post("/scenarios/screen", json{{"scenario", doc}, {"model_id", "m1"}}.dump(), "application/json");
  CHECK(err->status == 400);
  CHECK(json::parse(err->body)["format"] == kErrorFormat);
}

TEST_CASE("concurrent screening requests") {
  const auto mp = named_model();
  const auto cal = small_calibration(mp);
  Service svc(registry_with(mp, cal), std::make_shared<DecisionLog>());
  std::vector<std::thread> th;
  std::vector<std::string> out(8);
  for (int i = 0; i < 8; ++i)
    th.emplace_back([&, i] { out[static_cast<std::size_t>(i)] = canonical(svc.screen(to_json(scenario("c" + std::to_string(i % 4), 50 + i % 4)), "m1", "c1")); });
  for (auto& t : th) t.join();
  CHECK(svc.log().size() == 4);
  for (int i = 0; i < 4; ++i) CHECK(out[static_cast<std::size_t>(i)] == out[static_cast<std::size_t>(i + 4)]);
}

#ifdef CCSSIX_CLI
TEST_CASE("cli and http produce byte-identical decisions") {
  TempDir tmp;
  const auto mp = named_model();
  const auto cal = small_calibration(mp);
  write_json_file(tmp / "model.json", to_json(mp));
  write_json_file(tmp / "cal.json", to_json(cal));
  const auto doc = to_json(scenario("cli-1", 61));
  write_json_file(tmp / "scen.json", doc);
  const std::string cli = CCSSIX_CLI;
  const auto cmd = cli + " screen --model " + (tmp / "model.json") + " --cal " + (tmp / "cal.json") + " --scenario " +
                   (tmp / "scen.json") + " --log " + (tmp / "cli_log.jsonl") + " > " + (tmp / "out.txt") + " 2>&1";
  REQUIRE(std::system(cmd.c_str()) == 0);
  auto printed = slurp(tmp / "out.txt");
  REQUIRE(!printed.empty());
  printed.pop_back();  // newline

  Service svc(registry_with(mp, cal), std::make_shared<DecisionLog>(tmp / "http_log.jsonl"));
  Running srv(svc);
  httplib::Client c("127.0.0.1", srv.port);
  auto r = c.Post("/scenarios/screen", json{{"scenario", doc}, {"model_id", "m1"}, {"calibration_id", "c1"}}.dump(), "application/json");
  REQUIRE(r);
  CHECK(canonical(json::parse(r->body)["decision"]) == printed);
  CHECK(slurp(tmp / "cli_log.jsonl") == slurp(tmp / "http_log.jsonl"));

  // simulate prints the raw trajectory of the screen response
  REQUIRE(std::system((cli + " simulate --model " + (tmp / "model.json") + " --scenario " + (tmp / "scen.json") + " --out " +
                       (tmp / "traj.json") + " 2> /dev/null").c_str()) == 0);
  const auto traj = read_json_file(tmp / "traj.json");
  CHECK(traj["variables"] == json::parse(r->body)["trajectories"][0]["variables"]);
}

TEST_CASE("cli reports missing artifacts") {
  TempDir tmp;
  const std::string cli = CCSSIX_CLI;
  const auto cmd = cli + " screen --model " + (tmp / "none.json") + " --cal x --scenario y --log " + (tmp / "l") + " 2> " +
                   (tmp / "err.txt");
  CHECK(std::system(cmd.c_str()) != 0);
  const auto err = slurp(tmp / "err.txt");
  CHECK(err.find("not found") != std::string::npos);
  CHECK(err.find("ccssix train") != std::string::npos);
  CHECK(std::system((cli + " eval --suite bogus 2> /dev/null").c_str()) != 0);
  CHECK_FALSE(fs::exists(tmp / "l"));
}
#endif
