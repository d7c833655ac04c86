#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "lunar/cli.hpp"

namespace lunar::cli {

namespace fs = std::filesystem;

namespace {

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(fmt::format("cannot write '{}'", path.string()));
  out << content;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(fmt::format("cannot read '{}'", path));
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Overrides {
  std::uint64_t world_seed = 0;
  std::uint64_t mission_seed = 0;
  bool has_world_seed = false;
  bool has_mission_seed = false;
  std::string task;
  std::string output;
};

RunConfig configure(const std::string& path, const Overrides& o) {
  RunConfig cfg = load_config(path);
  if (o.has_world_seed) cfg.world_seed = o.world_seed;
  if (o.has_mission_seed) cfg.mission_seed = o.mission_seed;
  cfg.world.seed = cfg.world_seed;
  if (!o.task.empty()) {
    const auto id = mission::task_from_string(o.task);
    if (!id) throw ConfigDiagnostics({fmt::format("--task: unknown task '{}'", o.task)});
    cfg.task.task = *id;
    if (*id == mission::TaskId::ResourceCollection &&
        (cfg.task.deposit_index < 0 || cfg.task.deposit_index >= static_cast<int>(cfg.world.deposits.size())))
      throw ConfigDiagnostics({"--task: resource_collection needs a configured deposit"});
  }
  if (!o.output.empty()) cfg.output_dir = o.output;
  return cfg;
}

void print_diagnostics(const ConfigError& e, std::ostream& err) {
  if (const auto* d = dynamic_cast<const ConfigDiagnostics*>(&e)) {
    for (const auto& m : d->messages()) err << "config error: " << m << '\n';
  } else {
    err << "config error: " << e.what() << '\n';
  }
}

// Runs one configured mission with the exit-code mapping applied.
int guarded_run(const std::string& config_path, const Overrides& o, std::ostream& out, std::ostream& err) {
  RunConfig cfg;
  try {
    cfg = configure(config_path, o);
  } catch (const ConfigError& e) {
    print_diagnostics(e, err);
    return kExitConfig;
  }
  try {
    const RunSummary s = run(cfg);
    out << fmt::format("{} {} elapsed={} composite={} digest={} -> {}\n", mission::to_string(s.report.task),
                       s.report.outcome, s.report.elapsed, s.score.composite, s.telemetry_digest,
                       cfg.output_dir);
    return s.exit_code;
  } catch (const ConfigError& e) {
    print_diagnostics(e, err);
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "internal fault: " << e.what() << '\n';
    return kExitInternal;
  }
}

}  // namespace

int exit_code_for(const std::string& outcome) {
  if (outcome == "succeeded") return kExitOk;
  if (outcome == mission::kAborted || outcome == mission::kFault) return kExitInternal;
  return kExitTaskFailed;
}

RunSummary run(const RunConfig& config) {
  const world::World world = world::generate_world(config.world);
  const auto result = mission::run_task(config.task, world, config.stack, config.mission_seed);

  RunSummary s;
  s.report = result.report;
  s.score = mission::score(result.report, world, config.tolerances);
  s.telemetry_digest = result.telemetry_digest;
  s.exit_code = exit_code_for(result.report.outcome);

  const fs::path dir(config.output_dir);
  fs::create_directories(dir);
  std::string telemetry;
  for (const auto& line : result.telemetry) {
    telemetry += line;
    telemetry += '\n';
  }
  write_file(dir / "telemetry.jsonl", telemetry);
  write_file(dir / "report.json", report_to_json(result.report, result.telemetry_digest));
  write_file(dir / "score.json", score_to_json(s.score));
  write_file(dir / "trace.json", trace_to_json(result.trace));
  write_file(dir / "occupancy.pgm", mapping::export_pgm(result.grid));
  write_file(dir / "paths.csv", paths_to_csv(result.paths));
  return s;
}

int main_entry(int argc, char** argv) {
  CLI::App app{"Deterministic lunar surface mission simulator"};
  app.require_subcommand(1);

  std::string config_path, report_path, telemetry_path, output;
  Overrides o;
  std::vector<std::string> batch_configs;
  unsigned jobs = 0;

  auto add_seeds = [&](CLI::App* sub) {
    sub->add_option("--world-seed", o.world_seed, "Override the world seed");
    sub->add_option("--mission-seed", o.mission_seed, "Override the mission seed");
  };

  CLI::App* run_cmd = app.add_subcommand("run", "Run one mission and write its artifacts");
  run_cmd->add_option("-c,--config", config_path, "Run configuration (YAML)")->required();
  add_seeds(run_cmd);
  run_cmd->add_option("--task", o.task, "Task override");
  run_cmd->add_option("-o,--output", o.output, "Output directory");

  CLI::App* score_cmd = app.add_subcommand("score", "Re-score an existing report");
  score_cmd->add_option("-c,--config", config_path, "Run configuration (YAML)")->required();
  score_cmd->add_option("-r,--report", report_path, "report.json to score")->required();
  add_seeds(score_cmd);

  CLI::App* replay_cmd = app.add_subcommand("replay-check", "Verify a telemetry file");
  replay_cmd->add_option("telemetry", telemetry_path, "telemetry.jsonl")->required();

  CLI::App* dump_cmd = app.add_subcommand("world-dump", "Emit terrain, rocks, and deposits as JSON");
  dump_cmd->add_option("-c,--config", config_path, "Run configuration (YAML)")->required();
  add_seeds(dump_cmd);
  dump_cmd->add_option("-o,--output", output, "Output file (default: stdout)");

  CLI::App* batch_cmd = app.add_subcommand("batch", "Run several missions concurrently");
  batch_cmd->add_option("-c,--config", batch_configs, "Run configurations")->required();
  batch_cmd->add_option("-o,--output", o.output, "Parent output directory")->required();
  batch_cmd->add_option("-j,--jobs", jobs, "Concurrent missions (default: hardware threads)");
  add_seeds(batch_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }
  for (CLI::App* sub : {run_cmd, score_cmd, dump_cmd, batch_cmd}) {
    if (sub->count("--world-seed")) o.has_world_seed = true;
    if (sub->count("--mission-seed")) o.has_mission_seed = true;
  }

  if (*run_cmd) return guarded_run(config_path, o, std::cout, std::cerr);

  if (*score_cmd) {
    try {
      const RunConfig cfg = configure(config_path, o);
      const auto report = report_from_json(read_file(report_path));
      const world::World world = world::generate_world(cfg.world);
      std::cout << score_to_json(mission::score(report, world, cfg.tolerances));
      return kExitOk;
    } catch (const ConfigError& e) {
      print_diagnostics(e, std::cerr);
      return kExitConfig;
    } catch (const std::exception& e) {
      std::cerr << "internal fault: " << e.what() << '\n';
      return kExitInternal;
    }
  }

  if (*replay_cmd) {
    std::ifstream in(telemetry_path);
    if (!in) {
      std::cerr << "cannot read '" << telemetry_path << "'\n";
      return kExitConfig;
    }
    const ReplayResult r = replay_check(in);
    if (r.ok) {
      std::cout << fmt::format("PASS {} records\n", r.records);
      return kExitOk;
    }
    std::cout << fmt::format("FAIL line {}: {}\n", r.line, r.message);
    return kExitTaskFailed;
  }

  if (*dump_cmd) {
    try {
      const RunConfig cfg = configure(config_path, o);
      const std::string doc = world_to_json(world::generate_world(cfg.world));
      if (output.empty()) {
        std::cout << doc;
      } else {
        write_file(output, doc);
      }
      return kExitOk;
    } catch (const ConfigError& e) {
      print_diagnostics(e, std::cerr);
      return kExitConfig;
    } catch (const std::exception& e) {
      std::cerr << "internal fault: " << e.what() << '\n';
      return kExitInternal;
    }
  }

  // batch: each mission gets its own directory and shares nothing.
  const unsigned workers =
      std::max(1u, std::min<unsigned>(jobs ? jobs : std::thread::hardware_concurrency(),
                                      static_cast<unsigned>(batch_configs.size())));
  std::vector<int> codes(batch_configs.size(), kExitOk);
  std::vector<std::string> logs(batch_configs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < batch_configs.size(); k = next++) {
      Overrides mine = o;
      mine.output = (fs::path(o.output) / fmt::format("{:03d}_{}", k, fs::path(batch_configs[k]).stem().string())).string();
      std::ostringstream out, err;
      codes[k] = guarded_run(batch_configs[k], mine, out, err);
      logs[k] = out.str() + err.str();
    }
  };
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  int worst = kExitOk;
  for (std::size_t k = 0; k < batch_configs.size(); ++k) {
    std::cout << fmt::format("[{}] exit {}: {}", batch_configs[k], codes[k], logs[k]);
    worst = std::max(worst, codes[k]);
  }
  return worst;
}

}  // namespace lunar::cli
