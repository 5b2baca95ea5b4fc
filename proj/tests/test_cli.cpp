#include <doctest.h>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "fperr/cli.hpp"

using nlohmann::json;

namespace {
std::string bench(const char* name) {
  return std::string(FPERR_BENCH_DIR) + "/" + name;
}

struct RunOut {
  int code;
  std::string out;
  std::string err;
};

RunOut run_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  int code = fperr::cli::run(args, out, err);
  return RunOut{code, out.str(), err.str()};
}

std::filesystem::path write_temp(const std::string& name, const std::string& body) {
  auto p = std::filesystem::temp_directory_path() / name;
  std::ofstream f(p);
  f << body;
  return p;
}
}  // namespace

TEST_CASE("missing file and bad flags are usage errors") {
  CHECK(run_cli({"analyze", "/nonexistent/nope.sat"}).code == 2);
  CHECK(run_cli({"analyze", bench("intro.sat"), "--format", "yaml"}).code == 2);
  CHECK(run_cli({"--definitely-not-a-flag"}).code == 2);
}

TEST_CASE("json report carries the headline conditional numbers") {
  RunOut r = run_cli({"analyze", bench("intro.sat"), "--instability", "report", "--format",
                      "json", "--no-abstract"});
  REQUIRE(r.code == 0);
  json j = json::parse(r.out);
  CHECK(j["file"].is_string());
  REQUIRE(j["outputs"].is_array());
  const json& o = j["outputs"][0];
  CHECK(o["output"] == "y");
  CHECK(std::abs(o["bound"].get<double>() - 5.96e-8) / 5.96e-8 < 0.01);
  CHECK(o.contains("relative"));
  CHECK(o["stats"].contains("queries"));
  CHECK(o["stats"].contains("cache_hits"));
  CHECK(o["stats"].contains("seconds"));
  CHECK(o.contains("mode"));
  REQUIRE(o["guards"].is_array());
  REQUIRE(o["guards"].size() == 2);

  const json& inst = j["instability"];
  CHECK(std::abs(inst["windows"][0]["width"].get<double>() - 5.96e-6) / 5.96e-6 < 0.05);
  CHECK(std::abs(inst["ranking"][0]["jump"].get<double>() - 0.99) / 0.99 < 0.01);
}

TEST_CASE("default subcommand is analyze") {
  RunOut a = run_cli({bench("eq10.sat"), "--format", "json", "--no-abstract"});
  RunOut b = run_cli({"analyze", bench("eq10.sat"), "--format", "json", "--no-abstract"});
  REQUIRE(a.code == 0);
  json ja = json::parse(a.out), jb = json::parse(b.out);
  CHECK(ja["outputs"][0]["bound"] == jb["outputs"][0]["bound"]);
}

TEST_CASE("no-abstract equals an out-of-range window") {
  RunOut a = run_cli({"analyze", bench("eq10.sat"), "--format", "json", "--no-abstract"});
  RunOut b = run_cli({"analyze", bench("eq10.sat"), "--format", "json", "--window", "90,90"});
  REQUIRE(a.code == 0);
  REQUIRE(b.code == 0);
  json ja = json::parse(a.out), jb = json::parse(b.out);
  CHECK(ja["outputs"][0]["bound"].get<double>() == jb["outputs"][0]["bound"].get<double>());
}

TEST_CASE("analysis failures exit 1 and keep partial results") {
  auto p = write_temp("fperr_bad.sat",
                      "INPUTS{x: fl64 in [-1,1];}"
                      "EXPRS{bad: fl64 = 1.0/x; good: fl64 = x + x;} OUTPUTS{bad; good;}");
  RunOut r = run_cli({"analyze", p.string(), "--format", "json", "--no-abstract"});
  CHECK(r.code == 1);
  json j = json::parse(r.out);
  REQUIRE(j["outputs"].size() == 2);
  CHECK(j["outputs"][0].contains("error"));
  CHECK_FALSE(j["outputs"][1].contains("error"));
  std::filesystem::remove(p);
}

TEST_CASE("parse errors exit 1 with the failing category") {
  auto p = write_temp("fperr_syntax.sat", "INPUTS{x: fl64 in [2,1];} EXPRS{y: fl64=x;} OUTPUTS{y;}");
  RunOut r = run_cli({"analyze", p.string(), "--format", "json"});
  CHECK(r.code == 1);
  json j = json::parse(r.out);
  CHECK(j["error"]["category"] == "dsl_frontend");
  std::filesystem::remove(p);
}

TEST_CASE("shadow and profile subcommands run standalone") {
  RunOut s = run_cli({"shadow", bench("eq10.sat"), "--shadow", "5000", "--format", "json"});
  REQUIRE(s.code == 0);
  json js = json::parse(s.out);
  CHECK(js["empirical"]["shadow_max"].get<double>() >= 0.0);

  RunOut pr = run_cli({"profile", bench("eq10.sat"), "--profile", "5000", "--format", "json",
                       "--no-abstract"});
  REQUIRE(pr.code == 0);
  json jp = json::parse(pr.out);
  CHECK(jp["empirical"]["profiled_max"].get<double>() > 0.0);

  RunOut in = run_cli({"instability", bench("intro.sat"), "--format", "json", "--no-abstract"});
  REQUIRE(in.code == 0);
  json ji = json::parse(in.out);
  CHECK(ji["instability"]["ranking"].size() == 1);
}

TEST_CASE("FPERR_CACHE overrides the cache path") {
  auto cache = std::filesystem::temp_directory_path() / "fperr_env_cache.tsv";
  std::filesystem::remove(cache);
  setenv("FPERR_CACHE", cache.string().c_str(), 1);
  RunOut r = run_cli({"analyze", bench("eq10.sat"), "--format", "json", "--no-abstract"});
  unsetenv("FPERR_CACHE");
  REQUIRE(r.code == 0);
  CHECK(std::filesystem::exists(cache));
  std::filesystem::remove(cache);
}

TEST_CASE("cache file is honored across runs") {
  auto cache = std::filesystem::temp_directory_path() / "fperr_cli_cache.tsv";
  std::filesystem::remove(cache);
  RunOut a = run_cli({"analyze", bench("eq10.sat"), "--format", "json", "--no-abstract",
                      "--cache", cache.string()});
  REQUIRE(a.code == 0);
  CHECK(std::filesystem::exists(cache));
  RunOut b = run_cli({"analyze", bench("eq10.sat"), "--format", "json", "--no-abstract",
                      "--cache", cache.string()});
  json ja = json::parse(a.out), jb = json::parse(b.out);
  CHECK(jb["outputs"][0]["stats"]["cache_hits"].get<long>() > 0);
  CHECK(ja["outputs"][0]["bound"] == jb["outputs"][0]["bound"]);
  std::filesystem::remove(cache);
}
