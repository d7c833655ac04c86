#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "lunar/arm.hpp"
#include "lunar/localization.hpp"
#include "lunar/mapping.hpp"
#include "lunar/perception.hpp"
#include "lunar/planning.hpp"
#include "lunar/rng.hpp"
#include "lunar/state_machine.hpp"
#include "lunar/vehicle.hpp"
#include "lunar/world.hpp"

namespace lunar::mission {

enum class TaskId { ResourceLocalization, ResourceCollection, SelfLocalization };

std::string to_string(TaskId t);
std::optional<TaskId> task_from_string(const std::string& s);

// Parameters of the rover software stack. Every field has a default.
struct StackConfig {
  vehicle::RoverGeometry geometry;
  vehicle::ActuatorConfig actuators;
  vehicle::SlipConfig slip;
  vehicle::NoiseConfig noise;
  localization::FilterConfig filter;
  mapping::SensorModel sensor_model;
  mapping::InflationConfig inflation{0.8, 0.5, false};
  double map_resolution = 0.25;
  planning::DwaConfig dwa = default_dwa();
  planning::AstarConfig astar{planning::Heuristic::Euclidean, 3.0, 0};
  double recovery_omega = 0.5;
  perception::RansacConfig ransac;
  perception::DetectorConfig detector;
  arm::ArmParams arm;
  arm::ArmGains arm_gains;
  arm::ScoopPlanConfig scoop;
  std::optional<double> scoop_capacity;  // default: half the smallest deposit mass
  double volatile_sensor_radius = 2.0;   // m
  double bin_height = 1.0;               // hauler bin rim above ground, m

  double tick = 0.05;            // s
  double control_period = 0.25;  // s, local planner rate
  double lidar_period = 0.5;
  double vo_period = 0.2;
  double map_period = 1.0;
  double detector_period = 0.5;
  double replan_period = 2.0;
  double goal_tolerance = 0.5;  // m
  int telemetry_every = 20;     // ticks between periodic telemetry records

  static planning::DwaConfig default_dwa();
  void validate() const;
};

struct TaskConfig {
  TaskId task = TaskId::ResourceLocalization;
  double budget = 600.0;                    // simulated seconds
  std::optional<double> required_mass;      // task 2; default: the deposit's mass
  int deposit_index = 0;                    // task 2 target deposit
  double bin_offset = 3.0;                  // hauler bin distance from the deposit, m
  std::optional<planning::Region> search_region;  // default: the rock box
  double home_tolerance = 3.0;              // task 3 success radius, m
};

struct Tolerances {
  double deposit_match = 2.0;  // m
  double home = 3.0;           // m
};

struct ResourceClaim {
  Eigen::Vector2d position = Eigen::Vector2d::Zero();
  std::string type_label;
};

struct CollectedMass {
  int deposit_id = 0;
  double mass = 0.0;
};

struct MissionReport {
  TaskId task = TaskId::ResourceLocalization;
  std::string outcome;  // final outcome of the mission machine
  std::vector<ResourceClaim> claims;
  std::vector<CollectedMass> collected;
  double required_mass = 0.0;
  std::optional<Eigen::Vector3d> object_claim;
  bool returned_home = false;
  Eigen::Vector2d final_position = Eigen::Vector2d::Zero();  // true rover position at the end
  double elapsed = 0.0;
  double budget = 0.0;
  int cycles = 0;
};

struct Score {
  TaskId task = TaskId::ResourceLocalization;
  double recall = 0.0;
  double mean_error = 0.0;     // m, over matched claims
  double type_accuracy = 0.0;  // over matched claims
  int matched = 0;
  double collected_fraction = 0.0;
  std::optional<double> object_error;  // m
  bool home_success = false;
  double composite = 0.0;
};

/// Greedy nearest matching of claims to true deposits within tolerance.
Score score(const MissionReport& report, const world::World& truth, const Tolerances& tol = {});

/// Least-squares planar position from ranges measured at known positions.
/// Returns one estimate, or two mirrored ones when the positions are
/// (nearly) collinear.
std::vector<Eigen::Vector2d> trilaterate(const std::vector<Eigen::Vector2d>& positions,
                                         const std::vector<double>& ranges);

struct MissionResult {
  MissionReport report;
  ExecutionTrace trace;
  std::vector<std::string> telemetry;  // one record per line
  std::string telemetry_digest;
  mapping::OccupancyGrid grid;
  std::vector<std::pair<std::string, planning::Path>> paths;  // labelled plans
  std::string machine_name;
};

/// Runs one task end to end. All randomness derives from the mission seed;
/// the world is owned by the caller and copied.
MissionResult run_task(const TaskConfig& task, const world::World& world, const StackConfig& stack,
                       std::uint64_t mission_seed);

}  // namespace lunar::mission
