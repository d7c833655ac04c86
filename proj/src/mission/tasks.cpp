#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include <Eigen/Eigenvalues>

#include "sim.hpp"

namespace lunar::mission::detail {

namespace {

const std::string kDone = "done";
const std::string kFailed = "failed";
const std::string kSucceeded = "succeeded";

constexpr double kVolatilePeriod = 0.25;  // s between volatile-sensor samples
constexpr double kWaypointSpacing = 2.0;  // m
constexpr double kWaypointTolerance = 1.0;
constexpr double kArmStandoff = 2.5;      // horizontal distance from arm base to deposit and bin
constexpr double kBinDropHeight = 0.3;    // release point above the bin rim
constexpr double kObserveStandoff = 4.0;
constexpr double kDetectionSpacing = 1.0;  // m between camera poses kept for the estimate

class SimState : public State {
 public:
  SimState(MissionSim& sim, std::vector<std::string> outcomes)
      : sim_(sim), outcomes_(std::move(outcomes)) {}
  std::vector<std::string> outcomes() const override { return outcomes_; }
  void on_preempt(Context&) override { sim_.stop(); }

 protected:
  MissionSim& sim_;

 private:
  std::vector<std::string> outcomes_;
};

planning::Region default_region(const world::World& w) {
  const Eigen::Vector2d box = w.config.box_extent;
  return {-0.5 * box, box, 0.0};
}

std::vector<Eigen::Vector2d> waypoints_along(const planning::Path& path, double spacing) {
  std::vector<Eigen::Vector2d> out;
  if (path.empty()) return out;
  out.push_back(path.poses.front().xy());
  double run = 0.0;
  for (std::size_t k = 1; k < path.poses.size(); ++k) {
    run += (path.poses[k].xy() - path.poses[k - 1].xy()).norm();
    if (run >= spacing) {
      out.push_back(path.poses[k].xy());
      run = 0.0;
    }
  }
  if ((out.back() - path.poses.back().xy()).norm() > 1e-9) out.push_back(path.poses.back().xy());
  return out;
}

// Follows a list of waypoints, skipping those that turn out to be blocked.
class WaypointFollower {
 public:
  explicit WaypointFollower(MissionSim& sim) : sim_(sim), nav_(sim) {}

  void reset(std::vector<Eigen::Vector2d> wps) {
    wps_ = std::move(wps);
    next_ = 0;
    nav_.clear();
  }
  /// False once every waypoint has been visited or skipped.
  bool step() {
    if (!nav_.has_goal()) {
      while (next_ < wps_.size() && !sim_.costmap.passable(wps_[next_])) ++next_;
      if (next_ >= wps_.size()) {
        sim_.stop();
        return false;
      }
      nav_.set_goal(wps_[next_++], kWaypointTolerance);
    }
    if (nav_.update() != Navigator::Status::Active) nav_.clear();
    return true;
  }

 private:
  MissionSim& sim_;
  Navigator nav_;
  std::vector<Eigen::Vector2d> wps_;
  std::size_t next_ = 0;
};

// Readings of this tick; nullopt when the sensor was not sampled.
std::optional<std::vector<world::VolatileReading>> sample_volatiles(MissionSim& sim) {
  if (!sim.due(kVolatilePeriod)) return std::nullopt;
  const auto readings =
      world::sense_volatiles(sim.world, sim.truth.pose.xy(), sim.stack.volatile_sensor_radius);
  for (const auto& r : readings) {
    auto& log = sim.volatile_log[r.deposit_id];
    if (log.empty())
      sim.event({{"type", "detection"}, {"object", "volatile"}, {"deposit", r.deposit_id},
                 {"label", r.type_label}});
    log.push_back({sim.estimate().xy(), r.range, r.type_label});
  }
  return readings;
}

std::string majority_label(const std::vector<VolatileObservation>& obs) {
  std::map<std::string, int> votes;
  for (const auto& o : obs) ++votes[o.type_label];
  std::string best;
  int n = -1;
  for (const auto& [label, c] : votes)
    if (c > n) {
      n = c;
      best = label;
    }
  return best;
}

std::vector<Eigen::Vector2d> candidates_for(const std::vector<VolatileObservation>& obs) {
  std::vector<Eigen::Vector2d> pos;
  std::vector<double> ranges;
  for (const auto& o : obs) {
    pos.push_back(o.position);
    ranges.push_back(o.range);
  }
  return trilaterate(pos, ranges);
}

Eigen::Vector2d nearest_to(const std::vector<Eigen::Vector2d>& pts, const Eigen::Vector2d& p) {
  return *std::min_element(pts.begin(), pts.end(), [&](const auto& a, const auto& b) {
    return (a - p).squaredNorm() < (b - p).squaredNorm();
  });
}

void claim_deposit(MissionSim& sim, int id, const Eigen::Vector2d& p) {
  const std::string label = majority_label(sim.volatile_log[id]);
  sim.report.claims.push_back({p, label});
  sim.event({{"type", "claim"}, {"deposit", id}, {"position", {round6(p.x()), round6(p.y())}},
             {"label", label}});
}

// ---- Task 1 ----------------------------------------------------------------

class Survey : public SimState {
 public:
  explicit Survey(MissionSim& sim) : SimState(sim, {kDone}), follower_(sim) {}

  void on_enter(Context&) override {
    const auto region = sim_.task.search_region.value_or(default_region(sim_.world));
    planning::CoverageConfig cfg;
    cfg.astar = sim_.stack.astar;
    const double footprint = 2.0 * 0.9 * sim_.stack.volatile_sensor_radius;
    const auto cov = planning::plan_coverage(region, footprint, sim_.costmap, cfg);
    sim_.record_path("coverage", cov.path);
    follower_.reset(waypoints_along(cov.path, kWaypointSpacing));
  }

  std::optional<std::string> tick(Context&) override {
    sample_volatiles(sim_);
    if (!follower_.step()) return kDone;
    return std::nullopt;
  }

 private:
  WaypointFollower follower_;
};

// Drives toward each range-trilaterated deposit until the estimate is
// unambiguous and the signal peaks under the rover, then claims it.
class Localize : public SimState {
 public:
  explicit Localize(MissionSim& sim) : SimState(sim, {kDone}), nav_(sim) {}

  void on_enter(Context& ctx) override {
    pending_.clear();
    for (const auto& [id, obs] : sim_.volatile_log)
      if (!obs.empty()) pending_.push_back(id);
    current_ = -1;
    started_ = ctx.now;
  }

  std::optional<std::string> tick(Context& ctx) override {
    const auto readings = sample_volatiles(sim_);
    if (current_ < 0) {
      if (pending_.empty()) {
        sim_.stop();
        return kDone;
      }
      current_ = pending_.front();
      pending_.erase(pending_.begin());
      started_ = ctx.now;
      mirror_.reset();
      range_ = std::numeric_limits<double>::infinity();
      nav_.clear();
    }
    auto& log = sim_.volatile_log[current_];
    if (readings) {
      range_ = std::numeric_limits<double>::infinity();
      for (const auto& r : *readings)
        if (r.deposit_id == current_) range_ = r.range;
      if (mirror_ && std::isfinite(range_) && log.size() > mirror_log_size_) mirror_.reset();
    }
    const auto cands = candidates_for(log);
    const Eigen::Vector2d here = sim_.estimate().xy();
    const Eigen::Vector2d target = mirror_ ? *mirror_ : nearest_to(cands, here);
    if (!nav_.has_goal() || (nav_.goal() - target).norm() > 0.3) nav_.set_goal(target, 0.5);
    const auto status = nav_.update();
    const double gap = (here - target).norm();
    const bool settled = (cands.size() == 1 && gap <= 0.75 && range_ <= 1.0) ||
                         (status == Navigator::Status::Arrived && std::isfinite(range_));
    bool give_up = status == Navigator::Status::Failed || ctx.now - started_ > 90.0;
    if (!settled && gap <= 0.5 && readings && !std::isfinite(range_)) {
      // Silent at the estimate: the fit took the wrong side of the track.
      if (mirror_) {
        give_up = true;
      } else {
        mirror_ = reflect(target, log);
        mirror_log_size_ = log.size();
        nav_.clear();
      }
    }
    if (settled || give_up) {
      claim_deposit(sim_, current_, target);
      sim_.claimed.insert(current_);
      current_ = -1;
      sim_.stop();
    }
    return std::nullopt;
  }

 private:
  // Reflection of p across the principal line of the observation positions.
  static Eigen::Vector2d reflect(const Eigen::Vector2d& p, const std::vector<VolatileObservation>& obs) {
    Eigen::Vector2d mean = Eigen::Vector2d::Zero();
    for (const auto& o : obs) mean += o.position;
    mean /= static_cast<double>(obs.size());
    Eigen::Matrix2d scatter = Eigen::Matrix2d::Zero();
    for (const auto& o : obs) scatter += (o.position - mean) * (o.position - mean).transpose();
    const Eigen::Vector2d along = Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d>(scatter).eigenvectors().col(1);
    const Eigen::Vector2d d = p - mean;
    return mean + 2.0 * d.dot(along) * along - d;
  }

  Navigator nav_;
  std::vector<int> pending_;
  int current_ = -1;
  double started_ = 0.0;
  double range_ = std::numeric_limits<double>::infinity();
  std::optional<Eigen::Vector2d> mirror_;
  std::size_t mirror_log_size_ = 0;
};

// ---- Task 2 ----------------------------------------------------------------

struct Staging {
  Eigen::Vector2d bin = Eigen::Vector2d::Zero();
  Eigen::Vector2d standoff = Eigen::Vector2d::Zero();
  double required = 0.0;
};

class Wait : public SimState {
 public:
  Wait(MissionSim& sim, double duration) : SimState(sim, {kDone}), duration_(duration) {}
  void on_enter(Context& ctx) override { until_ = ctx.now + duration_ - 1e-9; }
  std::optional<std::string> tick(Context& ctx) override {
    sim_.stop();
    if (ctx.now >= until_) return kDone;
    return std::nullopt;
  }

 private:
  double duration_;
  double until_ = 0.0;
};

class Stage : public SimState {
 public:
  Stage(MissionSim& sim, std::shared_ptr<Staging> staging) : SimState(sim, {kDone, kFailed}), staging_(std::move(staging)) {}

  std::optional<std::string> tick(Context&) override {
    sim_.stop();
    const int idx = sim_.task.deposit_index;
    if (idx < 0 || idx >= static_cast<int>(sim_.world.deposits.size()))
      throw PreconditionError("task deposit index out of range");
    sim_.target_deposit = idx;
    const auto& dep = sim_.world.deposits[static_cast<std::size_t>(idx)];
    double smallest = std::numeric_limits<double>::infinity();
    for (const auto& d : sim_.world.deposits) smallest = std::min(smallest, d.total_mass);
    sim_.ledger.deposit_remaining = dep.remaining_mass;
    sim_.ledger.scoop.capacity = sim_.stack.scoop_capacity.value_or(0.5 * smallest);
    staging_->required = sim_.task.required_mass.value_or(dep.total_mass);
    sim_.report.required_mass = staging_->required;

    // Bin on one of eight compass directions; the standoff sees both at arm reach.
    const Eigen::Vector2d d = dep.position.head<2>();
    const double half = 0.5 * sim_.task.bin_offset;
    const double h = std::sqrt(std::max(0.0, kArmStandoff * kArmStandoff - half * half));
    for (int k = 0; k < 8; ++k) {
      const double a = k * kPi / 4.0;
      const Eigen::Vector2d u(std::cos(a), std::sin(a));
      const Eigen::Vector2d n(-u.y(), u.x());
      const Eigen::Vector2d bin = d + sim_.task.bin_offset * u;
      if (!sim_.costmap.contains(bin)) continue;
      for (double side : {1.0, -1.0}) {
        const Eigen::Vector2d s = d + half * u + side * h * n;
        if (!sim_.costmap.passable(s)) continue;
        const auto start = nearest_passable(sim_.costmap, sim_.estimate().xy(), 2.0);
        if (!start) continue;
        try {
          if (!planning::plan_astar(sim_.costmap, *start, s, sim_.stack.astar).ok()) continue;
        } catch (const InvalidEndpoint&) {
          continue;
        }
        staging_->bin = bin;
        staging_->standoff = s;
        sim_.event({{"type", "bin"}, {"position", {round6(bin.x()), round6(bin.y())}}});
        return kDone;
      }
    }
    return kFailed;
  }

 private:
  std::shared_ptr<Staging> staging_;
};

class Approach : public SimState {
 public:
  Approach(MissionSim& sim, std::shared_ptr<const Staging> staging)
      : SimState(sim, {kDone, kFailed}), staging_(std::move(staging)), nav_(sim) {}
  void on_enter(Context&) override { nav_.set_goal(staging_->standoff, 0.4); }
  std::optional<std::string> tick(Context&) override {
    switch (nav_.update()) {
      case Navigator::Status::Arrived: return kDone;
      case Navigator::Status::Failed: return kFailed;
      default: return std::nullopt;
    }
  }

 private:
  std::shared_ptr<const Staging> staging_;
  Navigator nav_;
};

class Excavate : public SimState {
 public:
  Excavate(MissionSim& sim, std::shared_ptr<const Staging> staging)
      : SimState(sim, {kDone, kFailed}), staging_(std::move(staging)) {}

  void on_enter(Context&) override {
    sim_.stop();
    const Pose2 est = sim_.estimate();
    const auto& arm = sim_.stack.arm;
    const auto& dep = sim_.world.deposits[static_cast<std::size_t>(sim_.target_deposit)];
    const Eigen::Vector2d dep_b = world_to_body(est, dep.position.head<2>()) - arm.mount.head<2>();
    const Eigen::Vector2d bin_b = world_to_body(est, staging_->bin) - arm.mount.head<2>();
    const double depth = world::height_at(sim_.world, dep.position.x(), dep.position.y()) - dep.position.z();
    const Eigen::Vector3d deposit_pos(dep_b.x(), dep_b.y(), -arm.mount.z() - depth);
    const Eigen::Vector3d bin_pos(bin_b.x(), bin_b.y(),
                                  sim_.stack.bin_height + kBinDropHeight - arm.mount.z());
    auto cfg = sim_.stack.scoop;
    cfg.ground_z = -arm.mount.z();
    const double to_move = std::min(staging_->required, sim_.ledger.deposit_remaining);
    trajectories_ = arm::plan_scoop_cycle(deposit_pos, bin_pos, sim_.ledger.scoop, to_move, arm, cfg,
                                          sim_.arm_state.q);
    index_ = 0;
    sim_.start_arm(trajectories_.front());
  }

  std::optional<std::string> tick(Context&) override {
    sim_.stop();
    if (sim_.arm_busy()) return std::nullopt;
    ++sim_.report.cycles;
    if (sim_.ledger.bin_mass >= staging_->required - 1e-9) return kDone;
    if (++index_ < trajectories_.size()) {
      sim_.start_arm(trajectories_[index_]);
      return std::nullopt;
    }
    return kFailed;
  }

 private:
  std::shared_ptr<const Staging> staging_;
  std::vector<arm::ArmTrajectory> trajectories_;
  std::size_t index_ = 0;
};

// ---- Task 3 ----------------------------------------------------------------

std::vector<perception::PosedDetection> detect_cubesat(MissionSim& sim) {
  std::vector<perception::PosedDetection> out;
  if (!sim.due(sim.stack.detector_period)) return out;
  const auto dets = perception::detect_objects(
      sim.world, vehicle::stereo_pose(sim.world, sim.stack.geometry, sim.truth.pose),
      sim.stack.detector, sim.detector_rng);
  const SensorPose cam = vehicle::stereo_pose(sim.world, sim.stack.geometry, sim.estimate());
  for (const auto& d : dets) {
    if (d.label != perception::ObjectClass::Cubesat) continue;
    out.push_back({cam, d});
    sim.event({{"type", "detection"}, {"object", "cubesat"}, {"range", round6(d.range)},
               {"bearing", round6(d.bearing)}});
  }
  return out;
}

class Search : public SimState {
 public:
  explicit Search(MissionSim& sim) : SimState(sim, {"found", "not_found"}), follower_(sim) {}

  void on_enter(Context&) override {
    spin_ = planning::recovery_rotate(sim_.stack.recovery_omega, sim_.stack.tick);
    spin_index_ = 0;
    const auto region = sim_.task.search_region.value_or(default_region(sim_.world));
    planning::CoverageConfig cfg;
    cfg.astar = sim_.stack.astar;
    const double footprint = 0.6 * sim_.stack.detector.max_range;
    const auto cov = planning::plan_coverage(region, footprint, sim_.costmap, cfg);
    sim_.record_path("coverage", cov.path);
    follower_.reset(waypoints_along(cov.path, kWaypointSpacing));
  }

  std::optional<std::string> tick(Context&) override {
    const auto dets = detect_cubesat(sim_);
    if (!dets.empty()) {
      sim_.detections.insert(sim_.detections.end(), dets.begin(), dets.end());
      sim_.stop();
      return "found";
    }
    if (spin_index_ < spin_.size()) {
      sim_.command = vehicle::DriveCommand::skid(0.0, spin_[spin_index_++].omega);
      return std::nullopt;
    }
    if (!follower_.step()) return "not_found";
    return std::nullopt;
  }

 private:
  WaypointFollower follower_;
  std::vector<planning::VelocityCommand> spin_;
  std::size_t spin_index_ = 0;
};

// Closes in on the object while collecting detections from distinct poses.
class Observe : public SimState {
 public:
  explicit Observe(MissionSim& sim) : SimState(sim, {kDone, kFailed}), nav_(sim) {}

  void on_enter(Context& ctx) override {
    target_ = perception::detection_to_world(sim_.detections.back()).head<2>();
    orbit_ = 0;
    entered_ = ctx.now;
    aim(sim_.estimate().xy());
  }

  std::optional<std::string> tick(Context& ctx) override {
    for (const auto& d : detect_cubesat(sim_)) {
      bool distinct = true;
      for (const auto& k : sim_.detections)
        distinct = distinct &&
                   (k.camera.position.head<2>() - d.camera.position.head<2>()).norm() >= kDetectionSpacing;
      if (distinct) sim_.detections.push_back(d);
    }
    const std::size_t n = sim_.detections.size();
    if (n >= 6) {
      sim_.stop();
      return kDone;
    }
    if (ctx.now - entered_ > 150.0) return n >= 3 ? std::optional(kDone) : std::optional(kFailed);
    if (nav_.update() != Navigator::Status::Active) {
      if (n >= 3) return kDone;
      if (++orbit_ > 6) return kFailed;
      // Step around the object to view it from elsewhere.
      const double a = orbit_ * kPi / 3.0;
      const Eigen::Vector2d r = sim_.estimate().xy() - target_;
      const Eigen::Vector2d rot(std::cos(a) * r.x() - std::sin(a) * r.y(),
                                std::sin(a) * r.x() + std::cos(a) * r.y());
      aim(target_ + rot);
    }
    return std::nullopt;
  }

 private:
  void aim(const Eigen::Vector2d& from) {
    Eigen::Vector2d dir = target_ - from;
    if (dir.norm() < 1e-9) dir = Eigen::Vector2d::UnitX();
    nav_.set_goal(target_ - kObserveStandoff * dir.normalized(), sim_.stack.goal_tolerance);
  }

  Navigator nav_;
  Eigen::Vector2d target_ = Eigen::Vector2d::Zero();
  int orbit_ = 0;
  double entered_ = 0.0;
};

class Estimate : public SimState {
 public:
  explicit Estimate(MissionSim& sim) : SimState(sim, {kDone}) {}
  std::optional<std::string> tick(Context&) override {
    sim_.stop();
    const auto est = perception::estimate_object_position(sim_.detections, sim_.stack.detector);
    sim_.report.object_claim = est.position;
    sim_.event({{"type", "claim"},
                {"object", "cubesat"},
                {"position", {round6(est.position.x()), round6(est.position.y()), round6(est.position.z())}}});
    return kDone;
  }
};

class ReturnHome : public SimState {
 public:
  explicit ReturnHome(MissionSim& sim) : SimState(sim, {"arrived", kFailed}), nav_(sim) {}
  void on_enter(Context&) override { nav_.set_goal(sim_.world.home_base_pose.xy(), 1.0); }
  std::optional<std::string> tick(Context&) override {
    switch (nav_.update()) {
      case Navigator::Status::Arrived: return "arrived";
      case Navigator::Status::Failed: return kFailed;
      default: return std::nullopt;
    }
  }

 private:
  Navigator nav_;
};

}  // namespace

std::shared_ptr<StateMachine> build_task_machine(MissionSim& sim) {
  switch (sim.task.task) {
    case TaskId::ResourceLocalization:
      return StateMachineBuilder("resource_localization", {kSucceeded, kFailed})
          .add("survey", std::make_shared<Survey>(sim), {{kDone, "localize"}})
          .add("localize", std::make_shared<Localize>(sim), {{kDone, kSucceeded}})
          .initial("survey")
          .build();
    case TaskId::ResourceCollection: {
      auto staging = std::make_shared<Staging>();
      return StateMachineBuilder("resource_collection", {kSucceeded, kFailed})
          .add("scan", std::make_shared<Wait>(sim, 1.0), {{kDone, "stage"}})
          .add("stage", std::make_shared<Stage>(sim, staging), {{kDone, "approach"}, {kFailed, kFailed}, {kFault, kFailed}})
          .add("approach", std::make_shared<Approach>(sim, staging), {{kDone, "settle"}, {kFailed, kFailed}})
          .add("settle", std::make_shared<Wait>(sim, 1.0), {{kDone, "excavate"}})
          .add("excavate", std::make_shared<Excavate>(sim, staging),
               {{kDone, kSucceeded}, {kFailed, kFailed}, {kFault, kFailed}})
          .initial("scan")
          .build();
    }
    case TaskId::SelfLocalization:
      return StateMachineBuilder("self_localization", {kSucceeded, kFailed})
          .add("search", std::make_shared<Search>(sim), {{"found", "observe"}, {"not_found", kFailed}})
          .add("observe", std::make_shared<Observe>(sim), {{kDone, "estimate"}, {kFailed, kFailed}})
          .add("estimate", std::make_shared<Estimate>(sim), {{kDone, "return_home"}, {kFault, kFailed}})
          .add("return_home", std::make_shared<ReturnHome>(sim), {{"arrived", kSucceeded}, {kFailed, kFailed}})
          .initial("search")
          .build();
  }
  throw Error("unknown task");
}

void finalize_partial_claims(MissionSim& sim) {
  if (sim.task.task != TaskId::ResourceLocalization) return;
  for (const auto& [id, obs] : sim.volatile_log) {
    if (obs.empty() || sim.claimed.count(id)) continue;
    const auto cands = candidates_for(obs);
    sim.report.claims.push_back({nearest_to(cands, sim.estimate().xy()), majority_label(obs)});
  }
}

}  // namespace lunar::mission::detail
