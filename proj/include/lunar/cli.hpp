#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "lunar/mission.hpp"
#include "lunar/world.hpp"

namespace lunar::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitTaskFailed = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitInternal = 3;

struct RunConfig {
  world::WorldConfig world;
  mission::StackConfig stack;
  mission::TaskConfig task;
  std::uint64_t world_seed = 1;
  std::uint64_t mission_seed = 1;
  std::string output_dir = "out";
  mission::Tolerances tolerances;
};

/// Every problem found in a document, one "line N: message" entry each.
class ConfigDiagnostics : public ConfigError {
 public:
  explicit ConfigDiagnostics(std::vector<std::string> messages);
  const std::vector<std::string>& messages() const { return messages_; }

 private:
  std::vector<std::string> messages_;
};

/// Parses and validates a YAML run document. Unknown keys are rejected.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);

// Structured documents written by `run`.
std::string report_to_json(const mission::MissionReport& report, const std::string& telemetry_digest);
mission::MissionReport report_from_json(const std::string& text);
std::string score_to_json(const mission::Score& score);
std::string trace_to_json(const mission::ExecutionTrace& trace);
std::string paths_to_csv(const std::vector<std::pair<std::string, planning::Path>>& paths);
std::string world_to_json(const world::World& world);

struct ReplayResult {
  bool ok = true;
  long line = 0;  // 1-based line of the first violation
  std::string message;
  long records = 0;
};

/// Monotone time, schema completeness, and event/mass consistency.
ReplayResult replay_check(std::istream& telemetry);

struct RunSummary {
  int exit_code = kExitOk;
  mission::MissionReport report;
  mission::Score score;
  std::string telemetry_digest;
};

/// Runs one mission and writes its artifacts into config.output_dir.
RunSummary run(const RunConfig& config);

/// Exit code for a finished mission outcome.
int exit_code_for(const std::string& outcome);

/// Command-line entry point of lunar_sim.
int main_entry(int argc, char** argv);

}  // namespace lunar::cli
