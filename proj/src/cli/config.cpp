#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <yaml-cpp/yaml.h>

#include "lunar/cli.hpp"

namespace lunar::cli {

namespace {

std::string join(const std::vector<std::string>& lines) {
  std::string out;
  for (const auto& l : lines) {
    if (!out.empty()) out += '\n';
    out += l;
  }
  return out;
}

int line_of(const YAML::Node& n) { return n.Mark().line + 1; }

// One mapping of the document. Every key read is remembered so that the
// leftovers can be reported as unknown.
class Section {
 public:
  Section(YAML::Node node, std::string path, std::vector<std::string>& diag, int line)
      : node_(std::move(node)), path_(std::move(path)), diag_(diag), line_(line) {
    if (node_ && !node_.IsNull() && !node_.IsMap()) {
      error(node_, fmt::format("'{}' must be a mapping", path_));
      node_ = YAML::Node();
    }
  }

  bool present() const { return node_ && node_.IsMap(); }
  int line() const { return line_; }

  YAML::Node take(const std::string& key) {
    used_.insert(key);
    if (!present()) return YAML::Node();
    return node_[key];
  }

  template <class T>
  bool get(const std::string& key, T& out) {
    const YAML::Node n = take(key);
    if (!n || n.IsNull()) return false;
    try {
      out = n.as<T>();
      return true;
    } catch (const YAML::Exception&) {
      error(n, fmt::format("'{}' has an invalid value", qualified(key)));
      return false;
    }
  }

  template <class T>
  void get_optional(const std::string& key, std::optional<T>& out) {
    T v{};
    if (get(key, v)) out = v;
  }

  bool angle_deg(const std::string& key, double& out) {
    double v = 0.0;
    if (!get(key, v)) return false;
    out = v * kPi / 180.0;
    return true;
  }

  /// Numeric list of length n (or n_alt when given).
  std::size_t numbers(const std::string& key, double* out, std::size_t n, std::size_t n_alt = 0) {
    const YAML::Node node = take(key);
    if (!node || node.IsNull()) return 0;
    if (!node.IsSequence() || (node.size() != n && (n_alt == 0 || node.size() != n_alt))) {
      error(node, n_alt ? fmt::format("'{}' must be a list of {} or {} numbers", qualified(key), n, n_alt)
                        : fmt::format("'{}' must be a list of {} numbers", qualified(key), n));
      return 0;
    }
    try {
      for (std::size_t i = 0; i < node.size(); ++i) out[i] = node[i].as<double>();
    } catch (const YAML::Exception&) {
      error(node, fmt::format("'{}' must contain numbers", qualified(key)));
      return 0;
    }
    return node.size();
  }

  Section child(const std::string& key) {
    const YAML::Node n = take(key);
    return Section(n, qualified(key), diag_, n ? line_of(n) : line_);
  }

  Section element(const YAML::Node& n, std::size_t index, const std::string& key) {
    return Section(n, fmt::format("{}[{}]", qualified(key), index), diag_, line_of(n));
  }

  /// Reports keys nobody asked for.
  void finish() {
    if (!present()) return;
    for (const auto& kv : node_) {
      const auto key = kv.first.as<std::string>();
      if (!used_.count(key)) error(kv.first, fmt::format("unknown key '{}'", qualified(key)));
    }
  }

  void error(const YAML::Node& n, const std::string& msg) {
    diag_.push_back(fmt::format("line {}: {}", line_of(n), msg));
  }
  void error_here(const std::string& msg) { diag_.push_back(fmt::format("line {}: {}", line_, msg)); }

 private:
  std::string qualified(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  YAML::Node node_;
  std::string path_;
  std::vector<std::string>& diag_;
  int line_;
  std::set<std::string> used_;
};

void read_pid(Section s, vehicle::PidGains& g) {
  s.get("kp", g.kp);
  s.get("ki", g.ki);
  s.get("kd", g.kd);
  s.get("integral_clamp", g.integral_clamp);
  s.get("output_clamp", g.output_clamp);
  s.finish();
}

void read_world(Section s, world::WorldConfig& w) {
  double v[3] = {0.0, 0.0, 0.0};
  if (s.numbers("box_extent", v, 2)) w.box_extent = {v[0], v[1]};
  s.get("rock_count", w.rock_count);
  {
    Section r = s.child("rock_radius");
    r.get("min", w.rock_radius_min);
    r.get("max", w.rock_radius_max);
    r.finish();
  }
  s.get("terrain_amplitude", w.terrain_amplitude);
  s.get("cell_size", w.cell_size);
  {
    const YAML::Node g = s.take("grid_nodes");
    if (g && !g.IsNull()) {
      try {
        if (g.IsSequence() && g.size() == 2) {
          w.grid_nx = g[0].as<int>();
          w.grid_ny = g[1].as<int>();
        } else {
          w.grid_nx = w.grid_ny = g.as<int>();
        }
      } catch (const YAML::Exception&) {
        s.error(g, "'world.grid_nodes' must be an integer or a pair of integers");
      }
    }
  }
  s.get("terrain_features", w.terrain_features);
  s.get("landmark_count", w.landmark_count);
  s.get("home_clear_radius", w.home_clear_radius);
  v[2] = 0.0;
  if (s.numbers("home_base", v, 3, 2)) w.home_base_pose = {v[0], v[1], v[2]};
  v[2] = std::numeric_limits<double>::quiet_NaN();
  if (s.numbers("cubesat", v, 3, 2)) w.cubesat_position = Eigen::Vector3d(v[0], v[1], v[2]);

  const YAML::Node deps = s.take("deposits");
  if (deps && !deps.IsNull()) {
    if (!deps.IsSequence()) {
      s.error(deps, "'world.deposits' must be a list");
    } else {
      for (std::size_t i = 0; i < deps.size(); ++i) {
        Section d = s.element(deps[i], i, "deposits");
        world::DepositSpec spec;
        spec.type_label = "water";
        d.get("type", spec.type_label);
        d.get("mass", spec.mass);
        d.get("depth", spec.depth);
        double p[2];
        if (d.numbers("position", p, 2)) spec.position = Eigen::Vector2d(p[0], p[1]);
        d.finish();
        w.deposits.push_back(spec);
      }
    }
  }
  s.finish();
}

void read_task(Section s, mission::TaskConfig& t) {
  const YAML::Node name = s.take("name");
  if (name && !name.IsNull()) {
    const auto id = mission::task_from_string(name.as<std::string>());
    if (id) {
      t.task = *id;
    } else {
      s.error(name, fmt::format("unknown task '{}' (expected resource_localization, "
                                "resource_collection, or self_localization)",
                                name.as<std::string>()));
    }
  }
  s.get("budget", t.budget);
  s.get_optional("required_mass", t.required_mass);
  s.get("deposit", t.deposit_index);
  s.get("bin_offset", t.bin_offset);
  s.get("home_tolerance", t.home_tolerance);
  Section r = s.child("search_region");
  if (r.present()) {
    planning::Region region;
    double v[2];
    if (r.numbers("origin", v, 2)) region.origin = {v[0], v[1]};
    if (r.numbers("extent", v, 2)) region.extent = {v[0], v[1]};
    r.get("orientation", region.orientation);
    t.search_region = region;
  }
  r.finish();
  s.finish();
}

void read_rover(Section s, mission::StackConfig& st) {
  auto& g = st.geometry;
  s.get("wheelbase", g.wheelbase);
  s.get("track", g.track);
  s.get("wheel_radius", g.wheel_radius);
  s.get("body_clearance", g.body_clearance);
  s.get("body_radius", g.body_radius);
  double v[3];
  if (s.numbers("lidar_mount", v, 3)) g.lidar_mount = {v[0], v[1], v[2]};
  if (s.numbers("stereo_mount", v, 3)) g.stereo_mount = {v[0], v[1], v[2]};
  s.get("actuator_time_constant", st.actuators.time_constant);
  read_pid(s.child("speed_pid"), st.actuators.speed_pid);
  read_pid(s.child("steer_pid"), st.actuators.steer_pid);
  s.finish();
}

void read_sensors(Section s, mission::StackConfig& st) {
  auto& n = st.noise;
  {
    Section l = s.child("lidar");
    l.angle_deg("fov_deg", n.lidar.fov);
    l.angle_deg("angular_step_deg", n.lidar.angular_step);
    l.get("max_range", n.lidar.max_range);
    l.get("range_sigma", n.lidar.range_sigma);
    l.finish();
  }
  s.get("gyro_sigma", n.gyro_sigma);
  s.get("gyro_bias", n.gyro_bias);
  s.get("accel_sigma", n.accel_sigma);
  s.get("encoder_sigma", n.encoder_sigma);
  {
    Section c = s.child("stereo");
    c.get("focal", n.stereo.focal);
    c.get("half_baseline", n.stereo.half_baseline);
    c.get("half_width", n.stereo.half_width);
    c.get("half_height", n.stereo.half_height);
    c.get("pixel_sigma", n.stereo.pixel_sigma);
    c.get("max_range", n.stereo_max_range);
    c.get("min_range", n.stereo_min_range);
    c.finish();
  }
  {
    Section d = s.child("detector");
    auto& det = st.detector;
    d.get("max_range", det.max_range);
    d.angle_deg("fov_deg", det.fov);
    d.get("p_detect", det.p_detect);
    d.angle_deg("bearing_sigma_deg", det.bearing_sigma);
    d.angle_deg("elevation_sigma_deg", det.elevation_sigma);
    d.get("range_sigma_fraction", det.range_sigma_fraction);
    d.finish();
  }
  s.get("volatile_radius", st.volatile_sensor_radius);
  s.finish();
}

void read_slip(Section s, vehicle::SlipConfig& slip) {
  s.get("k", slip.k);
  s.get("max_slip", slip.max_slip);
  s.get_optional("fixed", slip.fixed);
  s.finish();
}

void read_localization(Section s, mission::StackConfig& st) {
  auto& f = st.filter;
  double v[5];
  if (s.numbers("process_noise", v, 5)) f.process_noise << v[0], v[1], v[2], v[3], v[4];
  if (s.numbers("odometry_sigma", v, 2))
    f.odometry_noise = Eigen::Vector2d(v[0] * v[0], v[1] * v[1]).asDiagonal();
  double imu = 0.0;
  if (s.get("imu_sigma", imu)) f.imu_noise = imu * imu;
  if (s.numbers("vo_sigma", v, 3)) f.vo_noise = Eigen::Vector3d(v[0] * v[0], v[1] * v[1], v[2] * v[2]).asDiagonal();
  if (s.numbers("initial_sigma", v, 5)) f.initial_sigma << v[0], v[1], v[2], v[3], v[4];
  s.get("gate_probability", f.gate_probability);
  {
    Section r = s.child("ransac");
    r.get("iterations", st.ransac.iterations);
    r.get("inlier_threshold", st.ransac.inlier_threshold);
    r.finish();
  }
  s.finish();
}

void read_mapping(Section s, mission::StackConfig& st) {
  auto& m = st.sensor_model;
  s.get("resolution", st.map_resolution);
  s.get("l_hit", m.l_hit);
  s.get("l_miss", m.l_miss);
  s.get("l_min", m.l_min);
  s.get("l_max", m.l_max);
  s.get("occupied_probability", m.occupied_probability);
  s.get("point_height_threshold", m.point_height_threshold);
  s.get("robot_radius", st.inflation.robot_radius);
  s.get("decay", st.inflation.decay);
  s.get("track_unknown", st.inflation.track_unknown);
  s.finish();
}

void read_planning(Section s, mission::StackConfig& st) {
  const YAML::Node h = s.take("heuristic");
  if (h && !h.IsNull()) {
    const auto name = h.as<std::string>();
    if (name == "euclidean") {
      st.astar.heuristic = planning::Heuristic::Euclidean;
    } else if (name == "zero" || name == "dijkstra") {
      st.astar.heuristic = planning::Heuristic::Zero;
    } else {
      s.error(h, fmt::format("unknown heuristic '{}' (expected euclidean or zero)", name));
    }
  }
  s.get("cost_scale", st.astar.cost_scale);
  s.get("recovery_omega", st.recovery_omega);
  s.get("replan_period", st.replan_period);
  s.get("goal_tolerance", st.goal_tolerance);
  Section d = s.child("dwa");
  auto& c = st.dwa;
  d.get("v_max", c.v_max);
  d.get("omega_max", c.omega_max);
  d.get("accel_v", c.accel_v);
  d.get("accel_omega", c.accel_omega);
  d.get("control_period", c.control_period);
  d.get("v_samples", c.v_samples);
  d.get("omega_samples", c.omega_samples);
  d.get("horizon", c.horizon);
  d.get("sim_step", c.sim_step);
  d.get("w_heading", c.w_heading);
  d.get("w_clearance", c.w_clearance);
  d.get("w_velocity", c.w_velocity);
  d.get("carrot_distance", c.carrot_distance);
  d.get("clearance_cap", c.clearance_cap);
  d.finish();
  st.control_period = c.control_period;
  s.finish();
}

void read_arm(Section s, mission::StackConfig& st) {
  double v[4];
  if (s.numbers("links", v, 4)) st.arm.links = {v[0], v[1], v[2], v[3]};
  s.get_optional("scoop_capacity", st.scoop_capacity);
  s.get("bin_height", st.bin_height);
  s.get("carry_band", st.scoop.carry_band);
  s.get("approach_height", st.scoop.approach_height);
  s.get("tracking_fault_threshold", st.arm_gains.tracking_fault_threshold);
  read_pid(s.child("pid"), st.arm_gains.pid);
  s.finish();
}

void read_timing(Section s, mission::StackConfig& st) {
  s.get("tick", st.tick);
  s.get("lidar_period", st.lidar_period);
  s.get("vo_period", st.vo_period);
  s.get("map_period", st.map_period);
  s.get("detector_period", st.detector_period);
  s.finish();
}

// Runs a validator and files its message under the section's line.
template <class F>
void check(std::vector<std::string>& diag, int line, const std::string& section, F&& validate) {
  try {
    validate();
  } catch (const ConfigError& e) {
    diag.push_back(fmt::format("line {}: {}: {}", line, section, e.what()));
  }
}

}  // namespace

ConfigDiagnostics::ConfigDiagnostics(std::vector<std::string> messages)
    : ConfigError(join(messages)), messages_(std::move(messages)) {}

RunConfig parse_config(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigDiagnostics({fmt::format("line {}: {}", e.mark.line + 1, e.msg)});
  }
  std::vector<std::string> diag;
  RunConfig cfg;
  Section top(root, "", diag, 1);
  Section world = top.child("world");
  const int world_line = world.line();
  read_world(world, cfg.world);
  Section task = top.child("task");
  const int task_line = task.line();
  read_task(task, cfg.task);
  {
    Section seeds = top.child("seeds");
    seeds.get("world", cfg.world_seed);
    seeds.get("mission", cfg.mission_seed);
    seeds.finish();
  }
  read_rover(top.child("rover"), cfg.stack);
  read_sensors(top.child("sensors"), cfg.stack);
  read_slip(top.child("slip"), cfg.stack.slip);
  read_localization(top.child("localization"), cfg.stack);
  read_mapping(top.child("mapping"), cfg.stack);
  read_planning(top.child("planning"), cfg.stack);
  read_arm(top.child("arm"), cfg.stack);
  read_timing(top.child("timing"), cfg.stack);
  {
    Section t = top.child("telemetry");
    t.get("every", cfg.stack.telemetry_every);
    t.finish();
  }
  {
    Section o = top.child("output");
    o.get("dir", cfg.output_dir);
    o.finish();
  }
  {
    Section sc = top.child("scoring");
    sc.get("deposit_tolerance", cfg.tolerances.deposit_match);
    sc.get("home_tolerance", cfg.tolerances.home);
    sc.finish();
  }
  top.finish();

  cfg.world.seed = cfg.world_seed;
  check(diag, world_line, "world", [&] { cfg.world.validate(); });
  check(diag, 1, "stack", [&] { cfg.stack.validate(); });
  check(diag, task_line, "task", [&] {
    if (!(cfg.task.budget > 0.0)) throw ConfigError("budget must be > 0");
    if (cfg.task.required_mass && !(*cfg.task.required_mass > 0.0))
      throw ConfigError("required_mass must be > 0");
    if (!(cfg.task.bin_offset > 0.0) || cfg.task.bin_offset >= 5.0)
      throw ConfigError("bin_offset must lie in (0, 5) m");
    if (cfg.task.task == mission::TaskId::ResourceCollection &&
        (cfg.task.deposit_index < 0 || cfg.task.deposit_index >= static_cast<int>(cfg.world.deposits.size())))
      throw ConfigError("deposit index does not name a configured deposit");
    if (cfg.task.search_region &&
        (!(cfg.task.search_region->extent.x() > 0.0) || !(cfg.task.search_region->extent.y() > 0.0)))
      throw ConfigError("search_region extent must be positive");
  });
  if (!diag.empty()) throw ConfigDiagnostics(std::move(diag));
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigDiagnostics({fmt::format("cannot read config file '{}'", path)});
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

}  // namespace lunar::cli
