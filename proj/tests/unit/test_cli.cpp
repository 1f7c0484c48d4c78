#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "nec/cli.hpp"
#include "nec/errors.hpp"

using namespace nec;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("nec-cli-test-" + name);
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::string> problems_of(std::string_view text) {
  try {
    parse_config(text);
  } catch (const SchemaError& e) {
    return e.problems();
  }
  return {};
}

}  // namespace

TEST_CASE("minimal config takes the defaults") {
  const auto c = parse_config("task = steady\n");
  CHECK(c.task == Task::Steady);
  CHECK(c.model.ell == 2);
  CHECK(c.model.prescription == Prescription::Trace);
  CHECK(c.k_points == 65);
  CHECK(c.L == 20);
  CHECK(c.boundary == LatticeBoundary::Periodic);
}

TEST_CASE("schema violations are collected") {
  CHECK(problems_of("task = steady\nT = -0.1\n").size() == 1);
  CHECK(problems_of("task = stability\nell = 3\n").size() == 1);
  CHECK(problems_of("task = steady\ncolour = red\n").size() == 1);
  CHECK(problems_of("task = steady\n[nowhere]\nx = 1\n").size() == 1);
  CHECK(problems_of("task = island\nh = 2\n[island]\nL = 21\n").size() == 2);
  CHECK(problems_of("task = fit\n").size() == 1);
  CHECK(problems_of("task = steady\nT = abc\n").size() == 1);

  ConfigOverrides o;
  o.task = Task::Sweep;
  CHECK_THROWS_AS(parse_config("task = steady\n", o), SchemaError);
  CHECK(parse_config("", o).task == Task::Sweep);
}

TEST_CASE("resolved config round-trips") {
  const auto c = parse_config(
      "task = island\nmodel = pxp_2d\nomega = 0.35\nprescription = factorized\n"
      "[island]\nL = 12\nell_down = 0,4,8\nboundary = open\n[integrator]\nrtol = 1e-9\n");
  const std::string text = resolved_config_text(c);
  const auto back = parse_config(text);
  CHECK(resolved_config_text(back) == text);
  CHECK(config_hash(back) == config_hash(c));
  CHECK(back.ell_down == std::vector<int>{0, 4, 8});
  CHECK(back.model.hamiltonian.kind == HamiltonianKind::Pxp2d);

  auto other = c;
  other.threads = 3;
  other.out = "elsewhere";
  CHECK(config_hash(other) == config_hash(c));
  other.T = 0.2;
  CHECK(config_hash(other) != config_hash(c));
}

TEST_CASE("grid syntax") {
  CHECK(parse_grid("0.1,0.2") == std::vector<double>{0.1, 0.2});
  const auto g = parse_grid("0.02:0.34:0.02");
  REQUIRE(g.size() == 17);
  CHECK(g.back() == doctest::Approx(0.34));
  CHECK_THROWS(parse_grid("0.1:0.0:0.1"));
  CHECK_THROWS(parse_grid("x"));
}

TEST_CASE("steady task on the dark state") {
  const auto dir = scratch_dir("steady");
  auto c = parse_config("task = steady\nmodel = none\nT = 0\n");
  c.out = dir.string();
  std::ostringstream log;
  const auto r = run(c, log);
  REQUIRE(r.exit_code == 0);
  std::ifstream in(dir / "steady.csv");
  std::string header, row, extra;
  std::getline(in, header);
  std::getline(in, row);
  CHECK_FALSE(std::getline(in, extra));
  CHECK(header.rfind("model,ell,omega,T,h,prescription,initial,mz,converged", 0) == 0);
  CHECK(row.find(",up,1,1,") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("sweep writes a full grid and a manifest") {
  const auto a = scratch_dir("sweep-a");
  const auto b = scratch_dir("sweep-b");
  auto c = parse_config("task = sweep\n[sweep]\nT = 0.1:0.3:0.05\ndh = 0.5\n");
  c.out = a.string();
  std::ostringstream log;
  REQUIRE(run(c, log).exit_code == 0);

  std::ifstream in(a / "phase.csv");
  std::string line;
  int rows = -1;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 25);

  const auto manifest = nlohmann::json::parse(slurp(a / "manifest.json"));
  const auto outputs = manifest.at("outputs").get<std::vector<std::string>>();
  CHECK(std::count(outputs.begin(), outputs.end(), "phase.csv") == 1);
  CHECK(std::count(outputs.begin(), outputs.end(), "config.resolved.ini") == 1);
  CHECK(manifest.at("config_hash").get<std::string>() == config_hash(c));
  for (const char* key : {"code_version", "task", "prescription", "threads", "wall_time_s", "convergence", "results"}) {
    CHECK(manifest.contains(key));
  }

  c.out = b.string();
  c.threads = 1;
  REQUIRE(run(c, log).exit_code == 0);
  CHECK(slurp(a / "phase.csv") == slurp(b / "phase.csv"));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("a failing run writes error.json") {
  const auto dir = scratch_dir("fail");
  auto c = parse_config("task = fit\n[fit]\ninput = /nonexistent/phase.csv\n");
  c.out = dir.string();
  std::ostringstream log;
  const auto r = run(c, log);
  CHECK(r.exit_code == 1);
  const auto report = nlohmann::json::parse(slurp(dir / "error.json"));
  CHECK(report.at("status") == "error");
  fs::remove_all(dir);
}

#ifdef NEC_LAB_BINARY
TEST_CASE("command line reports schema errors with exit code 2") {
  const auto dir = scratch_dir("binary");
  fs::create_directories(dir);
  std::ofstream(dir / "bad.ini") << "task = steady\nT = -1\n";
  const std::string cmd = std::string(NEC_LAB_BINARY) + " --config " + (dir / "bad.ini").string() + " --out " +
                          (dir / "out").string() + " steady 2>/dev/null";
  const int status = std::system(cmd.c_str());
  CHECK(WEXITSTATUS(status) == 2);
  const auto report = nlohmann::json::parse(slurp(dir / "out" / "error.json"));
  CHECK(report.at("problems").size() == 1);
  fs::remove_all(dir);
}
#endif
