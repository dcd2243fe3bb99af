#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "jumpflow/runner.hpp"

namespace fs = std::filesystem;
namespace runner = jumpflow::runner;
using nlohmann::json;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("jumpflow_test_" + tag);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

fs::path write_file(const fs::path& dir, const std::string& name,
                    const std::string& content) {
  fs::path p = dir / name;
  std::ofstream out(p, std::ios::binary);
  out << content;
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json simulate_config(const fs::path& out_dir, int n_paths = 8) {
  return json{{"seed", 7},
              {"output_dir", out_dir.string()},
              {"model", {{"builtin", "tanh_jump"}, {"kappa", 1.5}}},
              {"sim", {{"T", 0.5}, {"dt", 1e-2}, {"cut", 0.05}}},
              {"experiment",
               {{"type", "simulate"}, {"n_paths", n_paths}}}};
}

}  // namespace

TEST_CASE("config round trip is a fixed point") {
  TempDir td("roundtrip");
  json j = simulate_config(td.path);
  auto cfg = runner::config_from_json(j);
  json ser = runner::config_to_json(cfg);
  auto cfg2 = runner::config_from_json(ser);
  json ser2 = runner::config_to_json(cfg2);
  CHECK(ser == ser2);
  CHECK(ser.at("seed").get<std::uint64_t>() == 7);
  CHECK(ser.at("model").at("builtin") == "tanh_jump");
}

TEST_CASE("custom models parse and serialize") {
  TempDir td("custom");
  json j = {
      {"seed", 3},
      {"output_dir", (td.path / "out").string()},
      {"model",
       {{"e", 2},
        {"d", 1},
        {"Z", {"0", "x1"}},
        // an explicit array: the braced form would collapse to an object
        {"V", json::array({json::array({"1", "0"})})},
        {"x0", {0.5, 0.0}}}},
      {"sim", {{"T", 0.25}, {"dt", 1e-2}, {"cut", 0.05}}},
      {"experiment", {{"type", "simulate"}, {"n_paths", 3}}}};
  auto cfg = runner::config_from_json(j);
  CHECK(cfg.model.sys.e == 2);
  CHECK(cfg.model.x0 == std::vector<double>{0.5, 0.0});
  json ser = runner::config_to_json(cfg);
  auto cfg2 = runner::config_from_json(ser);
  CHECK(runner::config_to_json(cfg2) == ser);
}

TEST_CASE("config validation failures carry json paths") {
  json j = {{"model", {{"builtin", "no_such_model"}}},
            {"experiment", {{"type", "simulate"}}}};
  try {
    runner::config_from_json(j);
    FAIL("expected ConfigError");
  } catch (const runner::ConfigError& ex) {
    CHECK(std::string(ex.what()).find("/model/builtin") != std::string::npos);
  }

  json j2 = simulate_config("/tmp/x");
  j2["experiment"]["type"] = "unknown_kind";
  CHECK_THROWS_AS(runner::config_from_json(j2), runner::ConfigError);

  json j3 = simulate_config("/tmp/x");
  j3["sim"]["dt"] = -1.0;
  CHECK_THROWS_AS(runner::config_from_json(j3), runner::ConfigError);

  // density experiments are tied to the model with a closed-form law
  json j4 = simulate_config("/tmp/x");
  j4["experiment"] = {{"type", "density"}, {"n_paths", 200}};
  CHECK_THROWS_AS(runner::config_from_json(j4), runner::ConfigError);
}

TEST_CASE("exit codes distinguish config from runtime failures") {
  TempDir td("exitcodes");
  std::ostringstream out, err;

  // missing file -> 2, message names the path
  int rc = runner::run((td.path / "absent.json").string(), {}, out, err);
  CHECK(rc == 2);
  CHECK(err.str().find("absent.json") != std::string::npos);

  // malformed JSON -> 2
  auto badp = write_file(td.path, "bad.json", "{ not json");
  std::ostringstream out2, err2;
  CHECK(runner::run(badp.string(), {}, out2, err2) == 2);

  // bad schema -> 2
  auto badschema = write_file(td.path, "schema.json",
                              R"({"model": 5, "experiment": {"type": "simulate"}})");
  std::ostringstream out3, err3;
  CHECK(runner::run(badschema.string(), {}, out3, err3) == 2);

  // valid run -> 0
  json good = simulate_config(td.path / "out");
  auto goodp = write_file(td.path, "good.json", good.dump());
  std::ostringstream out4, err4;
  CHECK(runner::run(goodp.string(), {}, out4, err4) == 0);
  CHECK(err4.str().empty());
}

TEST_CASE("simulate writes the advertised outputs") {
  TempDir td("outputs");
  json cfg = simulate_config(td.path / "out", 4);
  auto cfgp = write_file(td.path, "cfg.json", cfg.dump());
  std::ostringstream out, err;
  REQUIRE(runner::run(cfgp.string(), {}, out, err) == 0);

  const fs::path od = td.path / "out";
  REQUIRE(fs::exists(od / "manifest.json"));
  REQUIRE(fs::exists(od / "summary.json"));
  REQUIRE(fs::exists(od / "paths.csv"));

  json manifest = json::parse(slurp(od / "manifest.json"));
  CHECK(manifest.at("version") == runner::kVersion);
  CHECK(manifest.at("seed").get<std::uint64_t>() == 7);
  CHECK(manifest.at("experiment") == "simulate");
  CHECK(manifest.at("wall_time_s").get<double>() >= 0.0);
  bool lists_paths = false;
  for (const auto& o : manifest.at("outputs"))
    if (o == "paths.csv") lists_paths = true;
  CHECK(lists_paths);

  // csv header matches the recorded layout: path,t,states,J entries
  std::string csv = slurp(od / "paths.csv");
  CHECK(csv.rfind("path,t,x1,x2,Jf11", 0) == 0);
  // doubles are written with enough digits to round-trip (17 significant)
  CHECK(csv.find("0.050000000000000003") != std::string::npos);  // cut-grid artifacts or t values
}

TEST_CASE("overrides beat the config file") {
  TempDir td("override");
  json cfg = simulate_config(td.path / "a", 4);
  auto cfgp = write_file(td.path, "cfg.json", cfg.dump());

  runner::Overrides ov;
  ov.seed = 1234;
  ov.paths = 2;
  ov.out = (td.path / "b").string();
  std::ostringstream out, err;
  REQUIRE(runner::run(cfgp.string(), ov, out, err) == 0);
  CHECK_FALSE(fs::exists(td.path / "a"));
  json manifest = json::parse(slurp(td.path / "b" / "manifest.json"));
  CHECK(manifest.at("seed").get<std::uint64_t>() == 1234);
  CHECK(manifest.at("config").at("experiment").at("n_paths").get<int>() == 2);
}

TEST_CASE("reruns and thread counts do not change the bytes") {
  TempDir td("determinism");
  json cfg = simulate_config(td.path / "r1", 6);
  auto p1 = write_file(td.path, "c1.json", cfg.dump());
  cfg["output_dir"] = (td.path / "r2").string();
  auto p2 = write_file(td.path, "c2.json", cfg.dump());
  cfg["output_dir"] = (td.path / "r3").string();
  auto p3 = write_file(td.path, "c3.json", cfg.dump());

  std::ostringstream sink, esink;
  runner::Overrides serial;
  serial.threads = 1;
  runner::Overrides wide;
  wide.threads = 3;
  REQUIRE(runner::run(p1.string(), serial, sink, esink) == 0);
  REQUIRE(runner::run(p2.string(), serial, sink, esink) == 0);
  REQUIRE(runner::run(p3.string(), wide, sink, esink) == 0);

  const std::string a = slurp(td.path / "r1" / "paths.csv");
  const std::string b = slurp(td.path / "r2" / "paths.csv");
  const std::string c = slurp(td.path / "r3" / "paths.csv");
  CHECK(a == b);
  CHECK(a == c);
  CHECK(json::parse(slurp(td.path / "r1" / "summary.json")) ==
        json::parse(slurp(td.path / "r3" / "summary.json")));
}

TEST_CASE("verify-measure experiment reports the condition verdicts") {
  TempDir td("verify");
  json cfg = {{"seed", 1},
              {"output_dir", (td.path / "out").string()},
              {"model", {{"builtin", "tanh_jump"}, {"kappa", 1.5}}},
              {"sim", {{"T", 1.0}, {"dt", 1e-2}, {"cut", 0.05}}},
              {"experiment",
               {{"type", "verify-measure"},
                {"alpha", 0.5},
                {"box_lo", {-1.0, -1.0}},
                {"box_hi", {1.0, 1.0}}}}};
  auto p = write_file(td.path, "cfg.json", cfg.dump());
  std::ostringstream out, err;
  REQUIRE(runner::run(p.string(), {}, out, err) == 0);
  json summary = json::parse(slurp(td.path / "out" / "summary.json"));
  CHECK(summary.at("all_ok").get<bool>());
  CHECK(summary.at("cond1_ok").get<bool>());
  CHECK(summary.at("cond3_kphi").get<double>() == Catch::Approx(1.0));
}

TEST_CASE("interval-cdf experiment writes the default grid") {
  TempDir td("icdf");
  json cfg = {{"seed", 1},
              {"output_dir", (td.path / "out").string()},
              {"model", {{"builtin", "linear_additive"}}},
              {"experiment", {{"type", "interval-cdf"}, {"m", 5}, {"t0", 1.0}}}};
  auto p = write_file(td.path, "cfg.json", cfg.dump());
  std::ostringstream out, err;
  REQUIRE(runner::run(p.string(), {}, out, err) == 0);
  std::string csv = slurp(td.path / "out" / "intervalcdf.csv");
  CHECK(csv.rfind("x,alternate_series,standard_formula", 0) == 0);
  // 20 grid rows plus the header
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 21);
}
