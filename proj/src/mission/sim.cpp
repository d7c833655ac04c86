#include "sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace lunar::mission::detail {

namespace {

constexpr int kMaxPlanFailures = 5;
constexpr int kMaxRecoveries = 4;
constexpr double kProgressWindow = 30.0;  // s without getting closer triggers recovery
constexpr std::size_t kLookaheadPoses = 48;
constexpr double kEscapeSpeed = 0.3;     // m/s
constexpr double kEscapeDuration = 1.5;  // s per escape maneuver
constexpr int kStallPeriods = 4;         // control periods of standing still before a nudge
constexpr double kNudgeDistance = 0.75;  // m along the path

Json rounded(const Pose2& p) {
  return Json::array({round6(p.x), round6(p.y), round6(p.theta)});
}

// Planar camera motion (prev -> curr) expressed as a body-frame pose delta.
Pose2 camera_delta_to_body(const Eigen::Isometry3d& motion, const Eigen::Vector2d& mount) {
  const Eigen::Vector3d t = perception::camera_to_sensor(motion.translation());
  const Eigen::Vector3d ex = perception::camera_to_sensor(
      motion.linear() * perception::sensor_to_camera(Eigen::Vector3d::UnitX()));
  const double yaw = std::atan2(ex.y(), ex.x());
  const double c = std::cos(yaw), s = std::sin(yaw);
  // B = M * C * M^-1 with M the mount offset.
  const Eigen::Vector2d rm(c * mount.x() - s * mount.y(), s * mount.x() + c * mount.y());
  const Eigen::Vector2d d = mount + t.head<2>() - rm;
  return {d.x(), d.y(), yaw};
}

}  // namespace

double round6(double v) {
  const double r = std::round(v * 1e6) / 1e6;
  return r == 0.0 ? 0.0 : r;
}

MissionSim::MissionSim(const world::World& w, const StackConfig& s, const TaskConfig& t,
                       std::uint64_t seed)
    : world(w),
      stack(s),
      task(t),
      sensor_rng(Rng::stream(seed, "sensors")),
      vo_rng(Rng::stream(seed, "visual_odometry")),
      detector_rng(Rng::stream(seed, "detector")) {
  tick_period = stack.tick;
  truth.pose = world.home_base_pose;
  belief = stack.filter.initial_belief(world.home_base_pose);
  command = vehicle::DriveCommand::skid(0.0, 0.0);

  const auto& hf = world.heightfield;
  const double res = stack.map_resolution;
  const int nx = static_cast<int>(std::floor((hf.max_x() - hf.min_x()) / res + 1e-9));
  const int ny = static_cast<int>(std::floor((hf.max_y() - hf.min_y()) / res + 1e-9));
  grid = mapping::OccupancyGrid(hf.origin(), res, nx, ny);

  arm_state.q = stack.arm.stow;
  report.task = task.task;
  report.budget = task.budget;

  // First look around before anything moves.
  const auto scan = vehicle::simulate_lidar(world, vehicle::lidar_pose(world, stack.geometry, truth.pose),
                                            stack.noise.lidar, sensor_rng);
  mapping::integrate_scan(grid, {estimated_mount_xy().x(), estimated_mount_xy().y(), estimate().theta},
                          scan, stack.sensor_model);
  refresh_costmap();
}

Eigen::Vector2d MissionSim::estimated_mount_xy() const {
  return body_to_world(estimate(), stack.geometry.lidar_mount.head<2>());
}

bool MissionSim::due(double period) const {
  const long every = std::max(1L, std::lround(period / stack.tick));
  return ticks % every == 0;
}

void MissionSim::refresh_costmap() {
  costmap = mapping::inflate(grid, stack.sensor_model, stack.inflation);
  distances = mapping::distance_field(costmap, mapping::kLethalCost);
}

void MissionSim::record_path(const std::string& label, const planning::Path& path) {
  paths.emplace_back(label, path);
}

void MissionSim::start_arm(const arm::ArmTrajectory& traj) {
  arm_traj_ = traj;
  arm_t_ = traj.start_time();
}

void MissionSim::step_arm_once() {
  if (!arm_traj_) return;
  const double dt = stack.tick;
  const auto res = arm::step_arm(arm_state, *arm_traj_, arm_t_, stack.arm_gains, dt);
  arm_state = res.state;
  for (const auto& ev : res.events) {
    if (ev.kind == arm::ArmEventKind::TrackingFault) {
      event({{"type", "tracking_fault"}, {"joint", ev.joint}});
      continue;
    }
    bool at_deposit = false;
    if (ev.kind == arm::ArmEventKind::Dig && target_deposit >= 0) {
      const Eigen::Vector3d tip = stack.arm.mount + arm::fk(arm_state.q, stack.arm).position();
      const Eigen::Vector2d tip_world = body_to_world(truth.pose, tip.head<2>());
      const auto& dep = world.deposits[static_cast<std::size_t>(target_deposit)];
      at_deposit = (tip_world - dep.position.head<2>()).norm() <= 0.75;
    }
    const double moved = arm::apply_event(ev, ledger, at_deposit);
    if (target_deposit >= 0)
      world.deposits[static_cast<std::size_t>(target_deposit)].remaining_mass = ledger.deposit_remaining;
    event({{"type", ev.kind == arm::ArmEventKind::Dig ? "dig" : "dump"}, {"mass", round6(moved)}});
  }
  arm_t_ += dt;
  if (arm_t_ > arm_traj_->end_time() + 1e-9) arm_traj_.reset();
}

void MissionSim::advance() {
  const double dt = stack.tick;
  ++ticks;
  now = static_cast<double>(ticks) * dt;  // no drift from repeated addition

  vehicle::WheelSetpoints sp;
  try {
    sp = vehicle::drive_ik(command, stack.geometry);
  } catch (const InfeasibleCommand&) {
    sp = {};
  }
  const auto step = vehicle::step_vehicle(truth, sp, command.mode, stack.geometry, world, stack.slip,
                                          stack.actuators, dt);
  truth = step.state;
  bumped = step.collided;
  if (bumped) event({{"type", "collision"}, {"rock", step.rock_index}});

  // Proprioceptive fusion every tick.
  const auto prop = vehicle::simulate_proprioception(truth, stack.geometry, stack.noise, sensor_rng, dt);
  auto twist = vehicle::encoder_twist(prop.encoders, command.mode, stack.geometry);
  // Under contact the wheels slip against the rock; the stall itself says the body is still.
  if (bumped) twist = {};
  const double gate = stack.filter.gate_probability;
  belief = localization::ekf_update(
               belief, localization::Measurement::wheel_twist(twist.vx, twist.omega, stack.filter.odometry_noise),
               gate)
               .belief;
  belief = localization::ekf_update(
               belief, localization::Measurement::imu_yaw_rate(prop.imu.gyro_z, stack.filter.imu_noise), gate)
               .belief;
  belief = localization::ekf_predict(belief, dt, stack.filter.process_covariance(dt));

  if (due(stack.vo_period)) {
    const auto frame = vehicle::simulate_stereo(
        world, vehicle::stereo_pose(world, stack.geometry, truth.pose), stack.noise, sensor_rng);
    if (prev_frame_) {
      try {
        const auto est = perception::visual_odometry(*prev_frame_, frame, stack.noise.stereo,
                                                     stack.ransac, vo_rng);
        const Pose2 delta = camera_delta_to_body(est.motion, stack.geometry.stereo_mount.head<2>());
        const auto z = localization::vo_delta_to_pose_measurement(prev_anchor_, delta, stack.filter.vo_noise);
        belief = localization::ekf_update(belief, z, gate).belief;
      } catch (const InsufficientFeatures&) {
      } catch (const DegenerateGeometry&) {
      }
    }
    prev_frame_ = frame;
    prev_anchor_ = belief.pose();

    // Obstacle points from the same frame.
    std::vector<Eigen::Vector3d> pts;
    for (const auto& ip : perception::triangulate_frame(frame, stack.noise.stereo))
      pts.push_back(perception::camera_to_sensor(ip.p));
    const Pose2 est = belief.pose();
    const Eigen::Vector2d cam_xy = body_to_world(est, stack.geometry.stereo_mount.head<2>());
    mapping::integrate_points(grid, {cam_xy.x(), cam_xy.y(), est.theta}, stack.geometry.stereo_mount.z(),
                              pts, stack.sensor_model);
  }

  if (due(stack.lidar_period)) {
    const auto scan = vehicle::simulate_lidar(
        world, vehicle::lidar_pose(world, stack.geometry, truth.pose), stack.noise.lidar, sensor_rng);
    const Eigen::Vector2d m = estimated_mount_xy();
    mapping::integrate_scan(grid, {m.x(), m.y(), estimate().theta}, scan, stack.sensor_model);
  }
  if (due(stack.map_period)) refresh_costmap();

  step_arm_once();

  last_setpoints_ = sp;
  if (!pending_events_.empty() || ticks % std::max(1, stack.telemetry_every) == 0) write_telemetry();
}

void MissionSim::write_telemetry() {
  Json rec;
  rec["t"] = round6(now);
  rec["state"] = active_state ? active_state() : std::string();
  rec["true"] = rounded(truth.pose);
  rec["est"] = rounded(belief.pose());
  rec["cov_trace"] = round6(belief.cov.trace());
  Json steer = Json::array(), speed = Json::array();
  for (std::size_t i = 0; i < vehicle::kWheelCount; ++i) {
    steer.push_back(round6(last_setpoints_.steer[i]));
    speed.push_back(round6(last_setpoints_.speed[i]));
  }
  rec["wheels"] = {{"steer", steer}, {"speed", speed}};
  Json q = Json::array();
  for (int j = 0; j < 4; ++j) q.push_back(round6(arm_state.q(j)));
  rec["arm_q"] = q;
  double deposits = 0.0;
  for (const auto& d : world.deposits) deposits += d.remaining_mass;
  rec["mass"] = {{"deposit", round6(deposits)},
                 {"scoop", round6(ledger.scoop.carried_mass)},
                 {"bin", round6(ledger.bin_mass)}};
  rec["events"] = Json(pending_events_);
  pending_events_.clear();
  telemetry.push_back(rec.dump());
}

std::optional<Eigen::Vector2d> nearest_passable(const mapping::Costmap& map, const Eigen::Vector2d& p,
                                                double max_radius) {
  if (map.passable(p)) return p;
  const double res = map.resolution();
  const int r = static_cast<int>(std::ceil(max_radius / res));
  const int cx = static_cast<int>(std::floor((p.x() - map.origin().x()) / res));
  const int cy = static_cast<int>(std::floor((p.y() - map.origin().y()) / res));
  std::optional<Eigen::Vector2d> best;
  double best_d = std::numeric_limits<double>::infinity();
  for (int iy = cy - r; iy <= cy + r; ++iy) {
    for (int ix = cx - r; ix <= cx + r; ++ix) {
      if (!map.passable(ix, iy)) continue;
      const Eigen::Vector2d c = map.cell_center(ix, iy);
      const double d = (c - p).norm();
      if (d <= max_radius && d < best_d) {
        best_d = d;
        best = c;
      }
    }
  }
  return best;
}

void Navigator::set_goal(const Eigen::Vector2d& goal, double tolerance) {
  goal_ = goal;
  tolerance_ = tolerance;
  path_ = {};
  progress_ = 0;
  last_plan_ = -1e9;
  plan_failures_ = 0;
  recoveries_ = 0;
  recovery_.clear();
  recovery_index_ = 0;
  best_distance_ = (sim_.estimate().xy() - goal).norm();
  last_progress_ = sim_.now;
  first_plan_for_goal_ = true;
}

bool Navigator::plan() {
  last_plan_ = sim_.now;
  const auto& map = sim_.costmap;
  const auto start = nearest_passable(map, sim_.estimate().xy(), 2.0);
  const auto goal = nearest_passable(map, *goal_, 3.0);
  path_ = {};
  progress_ = 0;
  if (!start || !goal) return false;
  planning::PlanResult res;
  try {
    res = planning::plan_astar(map, *start, *goal, sim_.stack.astar);
  } catch (const InvalidEndpoint&) {
    return false;
  }
  if (!res.ok()) return false;
  path_ = res.path;
  if (first_plan_for_goal_) {
    sim_.record_path("nav", path_);
    first_plan_for_goal_ = false;
  }
  return true;
}

// Short straight or curved move (forward or reverse) that best increases the
// clearance from mapped obstacles; used when the rover sits inside the
// inflated zone or has bumped into something.
bool Navigator::start_escape() {
  const auto& map = sim_.costmap;
  const Pose2 est = sim_.estimate();
  const auto dist_at = [&](const Eigen::Vector2d& p) -> std::optional<double> {
    const auto c = map.cell_of(p);
    if (!c || map.cost(c->ix, c->iy) == mapping::kLethalCost) return std::nullopt;
    return sim_.distances[map.index(c->ix, c->iy)];
  };
  const double start = dist_at(est.xy()).value_or(0.0);
  const int steps = static_cast<int>(std::lround(kEscapeDuration / sim_.stack.tick));
  double best = start + 1e-9;
  std::optional<planning::VelocityCommand> chosen;
  // Reverse first: after a bump the obstacle is most likely ahead.
  for (double v : {-kEscapeSpeed, kEscapeSpeed}) {
    for (double w : {0.0, -0.4, 0.4}) {
      Pose2 p = est;
      bool ok = true;
      for (int k = 0; k < steps && ok; ++k) {
        p = vehicle::integrate_twist(p, {v, 0.0, w}, sim_.stack.tick);
        ok = dist_at(p.xy()).has_value();
      }
      if (!ok) continue;
      const double d = *dist_at(p.xy());
      if (d > best) {
        best = d;
        chosen = planning::VelocityCommand{v, 0.0, w};
      }
    }
  }
  if (!chosen && sim_.bumped) chosen = planning::VelocityCommand{-kEscapeSpeed, 0.0, 0.0};
  if (!chosen) return false;
  recovery_.assign(static_cast<std::size_t>(steps), *chosen);
  recovery_index_ = 0;
  path_ = {};
  sim_.event({{"type", "escape"}});
  return true;
}

// DWA can stall where its carrot cuts a corner through the inflated zone.
// The A* path itself is passable, so turn toward a nearby path pose and
// drive straight onto it.
bool Navigator::start_path_nudge(const Pose2& est) {
  if (path_.empty()) return false;
  const auto& poses = path_.poses;
  std::size_t k = progress_;
  while (k + 1 < poses.size() && (poses[k].xy() - est.xy()).norm() < kNudgeDistance) ++k;
  const Eigen::Vector2d to = poses[k].xy() - est.xy();
  const double dist = to.norm();
  if (dist < 0.1) return false;
  const int samples = static_cast<int>(std::ceil(dist / (0.5 * sim_.costmap.resolution())));
  for (int i = 1; i <= samples; ++i)
    if (!sim_.costmap.passable(est.xy() + to * (static_cast<double>(i) / samples))) return false;
  const double err = wrap_angle(std::atan2(to.y(), to.x()) - est.theta);
  const double rate = std::abs(sim_.stack.recovery_omega);
  const auto turn = static_cast<std::size_t>(std::lround(std::abs(err) / rate / sim_.stack.tick));
  const auto drive = static_cast<std::size_t>(std::lround(dist / kEscapeSpeed / sim_.stack.tick));
  recovery_.assign(turn, planning::VelocityCommand{0.0, 0.0, err > 0.0 ? rate : -rate});
  recovery_.insert(recovery_.end(), drive, planning::VelocityCommand{kEscapeSpeed, 0.0, 0.0});
  recovery_index_ = 0;
  if (recovery_.empty()) return false;
  sim_.event({{"type", "nudge"}});
  return true;
}

void Navigator::start_recovery() {
  ++recoveries_;
  recovery_ = planning::recovery_rotate(sim_.stack.recovery_omega, sim_.stack.tick);
  recovery_index_ = 0;
  path_ = {};
  sim_.event({{"type", "recovery"}});
}

Navigator::Status Navigator::update() {
  if (!goal_) {
    sim_.stop();
    return Status::Failed;
  }
  const Pose2 est = sim_.estimate();
  const double d = (est.xy() - *goal_).norm();
  if (d <= tolerance_) {
    sim_.stop();
    return Status::Arrived;
  }
  if (recovery_index_ < recovery_.size()) {
    const auto& c = recovery_[recovery_index_++];
    sim_.command = vehicle::DriveCommand::skid(c.v, c.omega);
    if (recovery_index_ == recovery_.size()) {
      recovery_.clear();
      recovery_index_ = 0;
      last_progress_ = sim_.now;
    }
    return Status::Active;
  }
  if (recoveries_ > kMaxRecoveries) {
    sim_.stop();
    return Status::Failed;
  }

  if (d < best_distance_ - 0.5) {
    best_distance_ = d;
    last_progress_ = sim_.now;
  } else if (sim_.now - last_progress_ > kProgressWindow) {
    start_recovery();
    return Status::Active;
  }

  if (!sim_.due(sim_.stack.control_period)) return Status::Active;
  if ((sim_.bumped || !sim_.costmap.passable(est.xy())) && start_escape()) {
    sim_.command = vehicle::DriveCommand::skid(recovery_[0].v, recovery_[0].omega);
    recovery_index_ = 1;
    return Status::Active;
  }

  bool blocked = false;
  if (!path_.empty()) {
    // Advance along the path and look for newly mapped obstacles ahead.
    const auto& poses = path_.poses;
    const std::size_t end = std::min(poses.size(), progress_ + 12);
    for (std::size_t k = progress_ + 1; k < end; ++k)
      if ((poses[k].xy() - est.xy()).norm() < (poses[progress_].xy() - est.xy()).norm()) progress_ = k;
    const std::size_t look = std::min(poses.size(), progress_ + kLookaheadPoses);
    for (std::size_t k = progress_ + 2; k < look && !blocked; ++k)
      blocked = !sim_.costmap.passable(poses[k].xy());
  }
  if (path_.empty() || blocked || sim_.now - last_plan_ >= sim_.stack.replan_period) {
    if (!plan()) {
      sim_.stop();
      if (++plan_failures_ >= kMaxPlanFailures) {
        plan_failures_ = 0;
        start_recovery();
      }
      return Status::Active;
    }
    plan_failures_ = 0;
  }

  planning::Path local;
  const std::size_t look = std::min(path_.poses.size(), progress_ + kLookaheadPoses);
  local.poses.assign(path_.poses.begin() + static_cast<std::ptrdiff_t>(progress_),
                     path_.poses.begin() + static_cast<std::ptrdiff_t>(look));
  if (local.poses.size() == path_.poses.size() - progress_) local.poses.push_back({goal_->x(), goal_->y(), 0.0});
  planning::RobotState rs{est, sim_.belief.mean(localization::kV), 0.0,
                          sim_.belief.mean(localization::kOmega)};
  const auto res = planning::dwa_step(sim_.costmap, rs, local, sim_.stack.dwa, &sim_.distances);
  if (!res.admissible) {
    start_recovery();
    return Status::Active;
  }
  const bool still = std::abs(res.cmd.v) < 0.05 && std::abs(res.cmd.omega) < 0.05;
  stalled_ = still ? stalled_ + 1 : 0;
  if (stalled_ >= kStallPeriods && start_path_nudge(est)) {
    stalled_ = 0;
    const auto& c = recovery_[recovery_index_++];
    sim_.command = vehicle::DriveCommand::skid(c.v, c.omega);
    return Status::Active;
  }
  sim_.command = vehicle::DriveCommand::skid(res.cmd.v, res.cmd.omega);
  return Status::Active;
}

}  // namespace lunar::mission::detail
