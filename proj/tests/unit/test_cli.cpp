#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "lunar/cli.hpp"

using namespace lunar;
using namespace lunar::cli;
namespace fs = std::filesystem;

namespace {

const std::string kFixtures = LUNAR_FIXTURES;

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("lunar_cli_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<std::string> diagnostics_of(const std::string& yaml) {
  try {
    parse_config(yaml);
  } catch (const ConfigDiagnostics& d) {
    return d.messages();
  }
  return {};
}

bool any_mentions(const std::vector<std::string>& msgs, const std::string& needle) {
  return std::any_of(msgs.begin(), msgs.end(), [&](const std::string& m) { return m.find(needle) != std::string::npos; });
}

std::string task2_telemetry() {
  auto cfg = load_config(kFixtures + "/task2.yaml");
  cfg.output_dir = scratch("task2").string();
  run(cfg);
  return slurp(fs::path(cfg.output_dir) / "telemetry.jsonl");
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

std::string join(const std::vector<std::string>& lines) {
  std::string s;
  for (const auto& l : lines) s += l + "\n";
  return s;
}

}  // namespace

TEST_CASE("a minimal document uses defaults") {
  const auto cfg = parse_config("task:\n  name: self_localization\n");
  CHECK(cfg.task.task == mission::TaskId::SelfLocalization);
  CHECK(cfg.task.budget == 600.0);
  CHECK(cfg.world.rock_count == 20);
  const auto empty = parse_config("{}\n");
  CHECK(empty.task.task == mission::TaskId::ResourceLocalization);
}

TEST_CASE("fixtures parse") {
  for (const char* f : {"task1", "task2", "task3", "task3_low_noise", "timeout"})
    CHECK_NOTHROW(load_config(kFixtures + "/" + f + ".yaml"));
  const auto t2 = load_config(kFixtures + "/task2.yaml");
  CHECK(t2.task.required_mass == 10.0);
  CHECK(t2.stack.scoop_capacity == 5.0);
  CHECK(t2.world_seed == 7);
  CHECK(t2.mission_seed == 11);
}

TEST_CASE("unknown keys and bad values are reported") {
  const auto typo = diagnostics_of("world:\n  rock_cout: 5\n");
  REQUIRE_FALSE(typo.empty());
  CHECK(any_mentions(typo, "rock_cout"));
  CHECK(any_mentions(typo, "line 2"));

  CHECK_FALSE(diagnostics_of("world:\n  rock_radius: {min: 0.6, max: 0.3}\n").empty());
  CHECK_FALSE(diagnostics_of("task:\n  name: fly_to_mars\n").empty());
  CHECK_FALSE(diagnostics_of("task:\n  budget: -1\n").empty());
  CHECK_FALSE(diagnostics_of("world: [1, 2\n").empty());

  // Several problems come back together.
  const auto many = diagnostics_of("world:\n  rock_cout: 5\ntask:\n  nam: x\n");
  CHECK(many.size() >= 2);
  CHECK_THROWS_AS(load_config("/nonexistent/run.yaml"), ConfigError);
}

TEST_CASE("exit codes follow outcomes") {
  CHECK(exit_code_for("succeeded") == kExitOk);
  CHECK(exit_code_for(mission::kTimeout) == kExitTaskFailed);
  CHECK(exit_code_for("failed") == kExitTaskFailed);
}

TEST_CASE("replay accepts real telemetry and flags tampering") {
  const auto text = task2_telemetry();
  std::istringstream ok(text);
  const auto good = replay_check(ok);
  CHECK(good.ok);
  CHECK(good.records > 10);

  auto lines = lines_of(text);
  REQUIRE(lines.size() > 30);
  auto shuffled = lines;
  std::swap(shuffled[5], shuffled[6]);
  std::istringstream s1(join(shuffled));
  const auto r1 = replay_check(s1);
  CHECK_FALSE(r1.ok);
  CHECK(r1.line == 7);  // line 7 now holds the earlier record

  // Change the mass of the first dig event.
  auto corrupt = lines;
  long dig_line = 0;
  for (std::size_t k = 0; k < corrupt.size(); ++k) {
    auto j = nlohmann::json::parse(corrupt[k]);
    auto& ev = j["events"];
    bool changed = false;
    for (auto& e : ev)
      if (e["type"] == "dig") {
        e["mass"] = e["mass"].get<double>() + 1.0;
        changed = true;
      }
    if (changed) {
      corrupt[k] = j.dump();
      dig_line = static_cast<long>(k) + 1;
      break;
    }
  }
  REQUIRE(dig_line > 0);
  std::istringstream s2(join(corrupt));
  const auto r2 = replay_check(s2);
  CHECK_FALSE(r2.ok);
  CHECK(r2.line == dig_line);

  auto missing = lines;
  missing[3] = R"({"t":1e9})";
  std::istringstream s3(join(missing));
  CHECK_FALSE(replay_check(s3).ok);
  std::istringstream s4("not json\n");
  CHECK(replay_check(s4).line == 1);
}

TEST_CASE("a too-small budget times out with exit code 1") {
  auto cfg = load_config(kFixtures + "/timeout.yaml");
  cfg.output_dir = scratch("timeout").string();
  const auto sum = run(cfg);
  CHECK(sum.exit_code == kExitTaskFailed);
  CHECK(sum.report.outcome == mission::kTimeout);
  CHECK(sum.report.elapsed <= cfg.task.budget + 1e-9);
  for (const char* f : {"report.json", "score.json", "trace.json", "telemetry.jsonl", "paths.csv", "occupancy.pgm"})
    CHECK(fs::exists(fs::path(cfg.output_dir) / f));
}

TEST_CASE("reruns are byte identical and reports round trip") {
  auto cfg = load_config(kFixtures + "/task2.yaml");
  const auto dir_a = scratch("rerun_a");
  cfg.output_dir = dir_a.string();
  const auto a = run(cfg);
  cfg.output_dir = scratch("rerun_b").string();
  const auto b = run(cfg);
  CHECK(a.exit_code == kExitOk);
  CHECK(a.telemetry_digest == b.telemetry_digest);
  for (const char* f : {"report.json", "telemetry.jsonl", "trace.json"})
    CHECK(slurp(dir_a / f) == slurp(fs::path(cfg.output_dir) / f));

  const auto text = report_to_json(a.report, a.telemetry_digest);
  const auto back = report_from_json(text);
  CHECK(report_to_json(back, a.telemetry_digest) == text);
  CHECK(back.cycles == 2);
  CHECK(back.required_mass == 10.0);
}

TEST_CASE("command line entry") {
  const auto dir = scratch("main");
  const std::string typo = (dir / "typo.yaml").string();
  std::ofstream(typo) << "world:\n  rock_cout: 5\n";
  std::string prog = "lunar_sim", sub = "run", flag = "--config";
  std::vector<char*> argv = {prog.data(), sub.data(), flag.data(), const_cast<char*>(typo.c_str())};
  CHECK(main_entry(static_cast<int>(argv.size()), argv.data()) == kExitConfig);

  std::string dump = "world-dump", cfg = kFixtures + "/task2.yaml";
  std::vector<char*> argv2 = {prog.data(), dump.data(), flag.data(), cfg.data()};
  std::ostringstream captured;
  auto* old = std::cout.rdbuf(captured.rdbuf());
  const int rc = main_entry(static_cast<int>(argv2.size()), argv2.data());
  std::cout.rdbuf(old);
  CHECK(rc == kExitOk);
  const auto j = nlohmann::json::parse(captured.str());
  CHECK(j.contains("rocks"));
  CHECK(j.contains("deposits"));
}
