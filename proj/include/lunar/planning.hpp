#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "lunar/common.hpp"
#include "lunar/mapping.hpp"
#include "lunar/rng.hpp"

namespace lunar::planning {

using mapping::CellIndex;
using mapping::Costmap;

struct Path {
  std::vector<Pose2> poses;
  double cost = 0.0;

  bool empty() const { return poses.empty(); }
  double length() const;
};

enum class PlanStatus { Ok, Unreachable, Empty };

std::string to_string(PlanStatus s);

struct PlanResult {
  PlanStatus status = PlanStatus::Unreachable;
  Path path;
  std::size_t expansions = 0;

  bool ok() const { return status == PlanStatus::Ok; }
};

enum class Heuristic { Euclidean, Zero };

struct AstarConfig {
  Heuristic heuristic = Heuristic::Euclidean;
  double cost_scale = 1.0;         // step cost = length * (1 + scale * cost / 252)
  std::size_t max_expansions = 0;  // 0: unlimited
};

/// 8-connected grid search. A diagonal move needs both orthogonal
/// neighbours passable, so paths never clip a blocked corner. Throws InvalidEndpoint when an endpoint is lethal or off the map.
PlanResult plan_astar(const Costmap& map, const CellIndex& start, const CellIndex& goal,
                      const AstarConfig& cfg = {});
PlanResult plan_astar(const Costmap& map, const Eigen::Vector2d& start, const Eigen::Vector2d& goal,
                      const AstarConfig& cfg = {});

/// True when every sample along the segment (spacing `step`) lies in a
/// passable cell. Endpoint cells listed in `allowed` are always accepted.
bool segment_free(const Costmap& map, const Eigen::Vector2d& a, const Eigen::Vector2d& b,
                  double step, const std::vector<CellIndex>& allowed = {});

/// True when no pose of the path lies in a lethal cell.
bool path_avoids_lethal(const Costmap& map, const Path& path);

struct RrtConfig {
  int n_max = 2000;
  double step = 1.0;          // steering distance, m
  double goal_bias = 0.05;
  double gamma = 0.0;         // rewiring radius gamma * sqrt(log n / n), capped at step;
                              // 0 picks a value from the map area
  double check_step = 0.0;    // collision sampling step; 0: half the map resolution
};

struct RrtNode {
  Eigen::Vector2d p = Eigen::Vector2d::Zero();
  int parent = -1;
  double cost = 0.0;
};

struct RrtResult {
  PlanResult plan;
  std::vector<RrtNode> tree;
  std::vector<double> best_cost_history;  // best goal cost after each sample (inf before)
};

RrtResult plan_rrt_star(const Costmap& map, const Eigen::Vector2d& start,
                        const Eigen::Vector2d& goal, const RrtConfig& cfg, Rng& rng);

struct VelocityCommand {
  double v = 0.0;   // forward (or vx in omni mode), m/s
  double vy = 0.0;  // lateral, omni only
  double omega = 0.0;
};

struct RobotState {
  Pose2 pose;
  double v = 0.0;
  double vy = 0.0;
  double omega = 0.0;
};

struct DwaConfig {
  double v_min = 0.0;
  double v_max = 1.5;
  double vy_max = 0.5;
  double omega_max = 1.0;
  double accel_v = 1.0;
  double accel_omega = 2.0;
  double control_period = 0.25;  // the window is what is reachable in this time
  int v_samples = 11;
  int omega_samples = 11;
  int vy_samples = 5;
  double horizon = 2.0;
  double sim_step = 0.1;
  double w_heading = 0.6;
  double w_clearance = 0.3;
  double w_velocity = 0.1;
  double carrot_distance = 2.0;  // lookahead along the global path
  double clearance_cap = 2.0;    // clearance score saturates at this distance, m
  bool omni = false;

  void validate() const;
};

struct DwaSample {
  VelocityCommand cmd;
  bool admissible = false;
  double heading = 0.0;
  double clearance = 0.0;
  double velocity = 0.0;
  double score = 0.0;
  std::vector<Pose2> trajectory;
};

struct DwaResult {
  bool admissible = false;
  VelocityCommand cmd;
  std::vector<Pose2> trajectory;
  int chosen = -1;
};

/// Point on the path `distance` ahead of the path point nearest to `p`.
Eigen::Vector2d carrot_point(const Path& path, const Eigen::Vector2d& p, double distance);

/// Every sample of the dynamic window with its scores, in index order.
std::vector<DwaSample> dwa_evaluate(const Costmap& map, const RobotState& state, const Path& path,
                                    const DwaConfig& cfg,
                                    const std::vector<double>* distances = nullptr);

/// `distances` may carry a precomputed distance field of lethal cells.
DwaResult dwa_step(const Costmap& map, const RobotState& state, const Path& path,
                   const DwaConfig& cfg, const std::vector<double>* distances = nullptr);

/// In-place rotation totalling one full turn.
std::vector<VelocityCommand> recovery_rotate(double omega, double dt);

struct Region {
  Eigen::Vector2d origin = Eigen::Vector2d::Zero();  // corner
  Eigen::Vector2d extent = Eigen::Vector2d::Zero();  // along the local x and y axes
  double orientation = 0.0;                          // rad, local x axis in the world

  Eigen::Vector2d to_world(const Eigen::Vector2d& local) const;
  bool contains(const Eigen::Vector2d& world) const;
};

struct CoverageResult {
  PlanStatus status = PlanStatus::Empty;
  Path path;
  int rows = 0;
  double row_length_total = 0.0;  // unclipped straight-row length
  double covered_fraction = 0.0;  // of reachable free cells in the region
};

struct CoverageConfig {
  bool completion_pass = true;  // visit cells the rows left uncovered
  AstarConfig astar;
};

CoverageResult plan_coverage(const Region& region, double footprint_width, const Costmap& map,
                             const CoverageConfig& cfg = {});

/// Fraction of passable cells inside the region that are 8-connected to
/// `start` and whose centers lie within radius of the path polyline.
double coverage_fraction(const Path& path, double radius, const Costmap& map, const Region& region,
                         const Eigen::Vector2d& start);

/// Delimited text: header then "x,y,theta" rows.
std::string export_path(const Path& path);

/// Assigns each pose the heading of its outgoing segment.
void assign_headings(Path& path);

}  // namespace lunar::planning
