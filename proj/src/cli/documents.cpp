#include <cmath>
#include <istream>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "lunar/cli.hpp"

namespace lunar::cli {

using Json = nlohmann::ordered_json;

namespace {

Json vec(const Eigen::Vector2d& v) { return Json::array({v.x(), v.y()}); }
Json vec(const Eigen::Vector3d& v) { return Json::array({v.x(), v.y(), v.z()}); }

Json trace_records(const std::vector<mission::TraceRecord>& records) {
  Json out = Json::array();
  for (const auto& r : records) {
    Json j;
    j["state"] = r.state;
    j["outcome"] = r.outcome;
    j["t_start"] = r.t_start;
    j["t_end"] = r.t_end;
    if (!r.error.empty()) j["error"] = r.error;
    if (!r.children.empty()) j["children"] = trace_records(r.children);
    out.push_back(j);
  }
  return out;
}

}  // namespace

std::string report_to_json(const mission::MissionReport& r, const std::string& telemetry_digest) {
  Json j;
  j["task"] = mission::to_string(r.task);
  j["outcome"] = r.outcome;
  j["elapsed"] = r.elapsed;
  j["budget"] = r.budget;
  Json claims = Json::array();
  for (const auto& c : r.claims) claims.push_back({{"position", vec(c.position)}, {"type", c.type_label}});
  j["claims"] = claims;
  Json collected = Json::array();
  for (const auto& c : r.collected) collected.push_back({{"deposit", c.deposit_id}, {"mass", c.mass}});
  j["collected"] = collected;
  j["required_mass"] = r.required_mass;
  j["cycles"] = r.cycles;
  j["object_claim"] = r.object_claim ? vec(*r.object_claim) : Json(nullptr);
  j["returned_home"] = r.returned_home;
  j["final_position"] = vec(r.final_position);
  j["telemetry_digest"] = telemetry_digest;
  return j.dump(2) + "\n";
}

mission::MissionReport report_from_json(const std::string& text) {
  mission::MissionReport r;
  try {
    const auto j = Json::parse(text);
    const auto task = mission::task_from_string(j.at("task").get<std::string>());
    if (!task) throw ConfigError("report names an unknown task");
    r.task = *task;
    r.outcome = j.value("outcome", std::string());
    r.elapsed = j.value("elapsed", 0.0);
    r.budget = j.value("budget", 0.0);
    for (const auto& c : j.at("claims")) {
      const auto& p = c.at("position");
      r.claims.push_back({{p.at(0).get<double>(), p.at(1).get<double>()}, c.at("type").get<std::string>()});
    }
    for (const auto& c : j.at("collected"))
      r.collected.push_back({c.at("deposit").get<int>(), c.at("mass").get<double>()});
    r.required_mass = j.value("required_mass", 0.0);
    r.cycles = j.value("cycles", 0);
    if (j.contains("object_claim") && !j.at("object_claim").is_null()) {
      const auto& p = j.at("object_claim");
      r.object_claim = Eigen::Vector3d(p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>());
    }
    r.returned_home = j.value("returned_home", false);
    const auto& f = j.at("final_position");
    r.final_position = {f.at(0).get<double>(), f.at(1).get<double>()};
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("malformed report: {}", e.what()));
  }
  return r;
}

std::string score_to_json(const mission::Score& s) {
  Json j;
  j["task"] = mission::to_string(s.task);
  j["recall"] = s.recall;
  j["mean_error"] = s.mean_error;
  j["type_accuracy"] = s.type_accuracy;
  j["matched"] = s.matched;
  j["collected_fraction"] = s.collected_fraction;
  j["object_error"] = s.object_error ? Json(*s.object_error) : Json(nullptr);
  j["home_success"] = s.home_success;
  j["composite"] = s.composite;
  return j.dump(2) + "\n";
}

std::string trace_to_json(const mission::ExecutionTrace& trace) {
  Json j;
  j["final_outcome"] = trace.final_outcome;
  if (!trace.error.empty()) j["error"] = trace.error;
  j["ticks"] = trace.ticks;
  j["records"] = trace_records(trace.records);
  return j.dump(2) + "\n";
}

std::string paths_to_csv(const std::vector<std::pair<std::string, planning::Path>>& paths) {
  std::string out = "label,index,x,y,theta\n";
  for (std::size_t k = 0; k < paths.size(); ++k) {
    for (const auto& p : paths[k].second.poses)
      out += fmt::format("{},{},{},{},{}\n", paths[k].first, k, p.x, p.y, p.theta);
  }
  return out;
}

std::string world_to_json(const world::World& w) {
  Json j;
  j["seed"] = w.config.seed;
  j["digest"] = world::world_digest(w);
  const auto& hf = w.heightfield;
  j["terrain"] = {{"origin", vec(hf.origin())},
                  {"cell_size", hf.cell_size()},
                  {"nx", hf.nx()},
                  {"ny", hf.ny()},
                  {"elevations", hf.elevations()}};
  Json rocks = Json::array();
  for (const auto& r : w.rocks) rocks.push_back({{"center", vec(r.center)}, {"radius", r.radius}});
  j["rocks"] = rocks;
  Json deps = Json::array();
  for (const auto& d : w.deposits)
    deps.push_back({{"id", d.id}, {"type", d.type_label}, {"position", vec(d.position)}, {"mass", d.total_mass}});
  j["deposits"] = deps;
  j["home_base"] = Json::array({w.home_base_pose.x, w.home_base_pose.y, w.home_base_pose.theta});
  j["cubesat"] = vec(w.cubesat_position);
  j["ground_features"] = w.ground_features.size();
  return j.dump() + "\n";
}

ReplayResult replay_check(std::istream& in) {
  ReplayResult res;
  auto fail = [&](long line, std::string msg) {
    res.ok = false;
    res.line = line;
    res.message = std::move(msg);
    return res;
  };
  static const char* kKeys[] = {"t", "state", "true", "est", "cov_trace", "wheels", "arm_q", "mass", "events"};
  constexpr double kTol = 1e-5;

  std::string line;
  long n = 0;
  bool have_prev = false;
  double prev_t = 0.0, total0 = 0.0;
  double prev_dep = 0.0, prev_scoop = 0.0, prev_bin = 0.0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const nlohmann::json::exception&) {
      return fail(n, "record is not valid JSON");
    }
    for (const char* k : kKeys)
      if (!j.contains(k)) return fail(n, fmt::format("record lacks key '{}'", k));
    double t = 0.0, dep = 0.0, scoop = 0.0, bin = 0.0;
    double dig = 0.0, dump = 0.0;
    try {
      t = j.at("t").get<double>();
      const auto& m = j.at("mass");
      dep = m.at("deposit").get<double>();
      scoop = m.at("scoop").get<double>();
      bin = m.at("bin").get<double>();
      for (const auto& e : j.at("events")) {
        const auto type = e.at("type").get<std::string>();
        if (type == "dig") dig += e.at("mass").get<double>();
        if (type == "dump") dump += e.at("mass").get<double>();
      }
    } catch (const nlohmann::json::exception&) {
      return fail(n, "record fields have the wrong shape");
    }
    if (have_prev && !(t > prev_t))
      return fail(n, fmt::format("time {} does not increase past {}", t, prev_t));
    const double total = dep + scoop + bin;
    if (!have_prev) {
      total0 = total;
    } else {
      if (std::abs(total - total0) > kTol)
        return fail(n, fmt::format("mass total {} differs from initial {}", total, total0));
      if (std::abs((prev_dep - dep) - dig) > kTol)
        return fail(n, fmt::format("deposit decrement {} does not match dig events {}", prev_dep - dep, dig));
      if (std::abs((scoop - prev_scoop) - (dig - dump)) > kTol)
        return fail(n, fmt::format("scoop change {} does not match dig minus dump {}", scoop - prev_scoop,
                                   dig - dump));
      if (std::abs((bin - prev_bin) - dump) > kTol)
        return fail(n, fmt::format("bin increment {} does not match dump events {}", bin - prev_bin, dump));
    }
    have_prev = true;
    prev_t = t;
    prev_dep = dep;
    prev_scoop = scoop;
    prev_bin = bin;
    ++res.records;
  }
  return res;
}

}  // namespace lunar::cli
