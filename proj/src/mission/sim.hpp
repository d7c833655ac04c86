#pragma once

// Closed-loop simulation shared by the task states. Not part of the public API.

#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "lunar/mission.hpp"

namespace lunar::mission::detail {

using Json = nlohmann::ordered_json;

struct VolatileObservation {
  Eigen::Vector2d position;  // estimated rover position
  double range = 0.0;
  std::string type_label;
};

class MissionSim : public Context {
 public:
  MissionSim(const world::World& world, const StackConfig& stack, const TaskConfig& task,
             std::uint64_t seed);

  /// One physics, sensing, and estimation step with the current command.
  void advance();

  Pose2 estimate() const { return belief.pose(); }
  Eigen::Vector2d estimated_mount_xy() const;
  bool due(double period) const;
  void event(Json e) { pending_events_.push_back(std::move(e)); }
  void stop() { command = vehicle::DriveCommand::skid(0.0, 0.0); }
  void record_path(const std::string& label, const planning::Path& path);

  // Arm execution; the trajectory advances once per tick.
  void start_arm(const arm::ArmTrajectory& traj);
  bool arm_busy() const { return arm_traj_.has_value(); }
  double arm_time() const { return arm_t_; }

  world::World world;
  StackConfig stack;
  TaskConfig task;

  Rng sensor_rng;
  Rng vo_rng;
  Rng detector_rng;

  vehicle::RoverState truth;
  localization::Belief belief;
  mapping::OccupancyGrid grid;
  mapping::Costmap costmap;
  std::vector<double> distances;
  vehicle::DriveCommand command;

  arm::ArmJointState arm_state;
  arm::MassLedger ledger;
  int target_deposit = -1;

  MissionReport report;
  std::map<int, std::vector<VolatileObservation>> volatile_log;
  std::set<int> claimed;
  std::vector<perception::PosedDetection> detections;

  std::function<std::string()> active_state;
  std::vector<std::string> telemetry;
  std::vector<std::pair<std::string, planning::Path>> paths;
  long ticks = 0;
  bool bumped = false;  // body contact this tick; wheels may spin in place

 private:
  void refresh_costmap();
  void step_arm_once();
  void write_telemetry();

  vehicle::WheelSetpoints last_setpoints_;
  std::optional<perception::StereoFrame> prev_frame_;
  Pose2 prev_anchor_;
  std::optional<arm::ArmTrajectory> arm_traj_;
  double arm_t_ = 0.0;
  std::vector<Json> pending_events_;
};

/// Point-to-point driving on the live costmap: A* plans, DWA tracks them,
/// and rotate-in-place recovery fires when the local planner is stuck.
class Navigator {
 public:
  enum class Status { Active, Arrived, Failed };

  explicit Navigator(MissionSim& sim) : sim_(sim) {}

  void set_goal(const Eigen::Vector2d& goal, double tolerance);
  void clear() { goal_.reset(); }
  bool has_goal() const { return goal_.has_value(); }
  const Eigen::Vector2d& goal() const { return *goal_; }
  /// Sets the sim command for this tick.
  Status update();

 private:
  bool plan();
  void start_recovery();
  bool start_escape();
  bool start_path_nudge(const Pose2& est);

  MissionSim& sim_;
  std::optional<Eigen::Vector2d> goal_;
  double tolerance_ = 0.5;
  planning::Path path_;
  std::size_t progress_ = 0;
  double last_plan_ = -1e9;
  int plan_failures_ = 0;
  int recoveries_ = 0;
  std::vector<planning::VelocityCommand> recovery_;
  std::size_t recovery_index_ = 0;
  double best_distance_ = 0.0;
  double last_progress_ = 0.0;
  bool first_plan_for_goal_ = true;
  int stalled_ = 0;  // consecutive control periods with a standing-still DWA command
};

/// Nearest passable cell center to p within max_radius, if any.
std::optional<Eigen::Vector2d> nearest_passable(const mapping::Costmap& map,
                                                const Eigen::Vector2d& p, double max_radius);

std::shared_ptr<StateMachine> build_task_machine(MissionSim& sim);
/// Best-guess claims for deposits sensed but not yet claimed.
void finalize_partial_claims(MissionSim& sim);

double round6(double v);

}  // namespace lunar::mission::detail
