#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "lunar/common.hpp"
#include "lunar/vehicle.hpp"

namespace lunar::arm {

inline constexpr std::size_t kJointCount = 4;

using JointVector = Eigen::Vector4d;
using Matrix64 = Eigen::Matrix<double, 6, 4>;

struct DHRow {
  double a = 0.0;
  double alpha = 0.0;
  double d = 0.0;
  double theta_offset = 0.0;
};

struct JointLimit {
  double lower = -std::numeric_limits<double>::infinity();
  double upper = std::numeric_limits<double>::infinity();

  bool bounded() const { return std::isfinite(lower) || std::isfinite(upper); }
  bool contains(double q, double tol = 1e-12) const { return q >= lower - tol && q <= upper + tol; }
};

struct ArmParams {
  std::array<double, kJointCount> links{0.3, 2.5, 1.5, 0.0};
  std::array<JointLimit, kJointCount> limits{
      JointLimit{},                               // shoulder azimuth: unbounded
      JointLimit{-kPi / 4.0, 2.0 * kPi / 3.0},    // shoulder elevation
      JointLimit{-2.4, 2.4},                      // elbow pivot
      JointLimit{0.0, 2.8}};                      // wrist pitch
  JointLimit dig_range{0.0, 1.2};   // wrist sub-range that digs and holds
  JointLimit drop_range{2.2, 2.8};  // wrist sub-range that drops into the bin
  Eigen::Vector3d mount{0.0, 0.0, 0.5};  // arm base on the rover body
  JointVector stow{0.0, 1.2, -2.2, 0.6};

  /// DH rows (a, alpha, d, theta offset) from the link lengths.
  std::array<DHRow, kJointCount> dh_rows() const;
  bool within_limits(const JointVector& q, double tol = 1e-12) const;
  JointVector clamp(const JointVector& q) const;
  void validate() const;
};

struct FkResult {
  // frames[0] is the base; frames[i] is the frame after joint i.
  std::array<Eigen::Isometry3d, kJointCount + 1> frames;

  const Eigen::Isometry3d& bucket() const { return frames.back(); }
  Eigen::Vector3d position() const { return frames.back().translation(); }
};

Eigen::Isometry3d dh_transform(const DHRow& row, double q);
FkResult fk(const JointVector& q, const ArmParams& params);

/// Global bucket pitch in the vertical plane selected by q1.
inline double bucket_pitch(const JointVector& q) { return q(1) + q(2) + q(3); }

struct ArmTarget {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  double pitch = 0.0;
};

/// Closed-form solutions (azimuth decoupling plus planar 2R). Returns every
/// limit-respecting branch. Throws UnreachableError or LimitInfeasibleError.
std::vector<JointVector> ik(const ArmTarget& target, const ArmParams& params);

/// Branch closest to a reference configuration.
JointVector ik_nearest(const ArmTarget& target, const ArmParams& params, const JointVector& ref);

Matrix64 jacobian(const JointVector& q, const ArmParams& params);

inline constexpr double kResolvedRateDamping = 1e-3;

JointVector resolved_rate_step(const JointVector& q, const ArmTarget& target,
                               const ArmParams& params, double gain, double dt);

struct ScoopState {
  double carried_mass = 0.0;
  double capacity = 0.0;

  bool carrying() const { return carried_mass > 0.0; }
};

enum class Phase { Approach, Dig, Carry, Dump, Retract };

std::string to_string(Phase p);
std::optional<Phase> phase_from_string(const std::string& s);

struct Waypoint {
  double t = 0.0;
  JointVector q = JointVector::Zero();
  Phase phase = Phase::Approach;  // phase of the segment ending at this waypoint
};

struct ArmTrajectory {
  std::vector<Waypoint> waypoints;
  double max_rate = 0.8;   // trapezoid profile used between waypoints
  double max_accel = 1.6;

  double start_time() const { return waypoints.front().t; }
  double end_time() const { return waypoints.back().t; }
  /// Position and velocity at time t (clamped to the trajectory span).
  void sample(double t, JointVector& q, JointVector& qdot) const;
  /// End time of the last waypoint labelled with the phase, if present.
  std::optional<double> phase_end(Phase p) const;
};

struct ScoopPlanConfig {
  double carry_band = 0.25;           // rad around the hold reference
  double max_joint_rate = 0.8;        // rad/s
  double max_joint_accel = 1.6;       // rad/s^2
  double terrain_clearance = 0.2;     // m, bucket above ground outside the dig phase
  double ground_z = -0.5;             // terrain height in the arm base frame
  double approach_height = 0.6;       // above the deposit surface point
  double carry_step = 0.1;            // Cartesian spacing of carry waypoints, m
};

int scoop_cycle_count(double deposit_mass, double capacity);

/// One trajectory per dig-dump cycle. Positions are in the arm base frame.
std::vector<ArmTrajectory> plan_scoop_cycle(const Eigen::Vector3d& deposit_pos,
                                            const Eigen::Vector3d& bin_pos,
                                            const ScoopState& scoop, double deposit_mass,
                                            const ArmParams& params,
                                            const ScoopPlanConfig& cfg = {},
                                            std::optional<JointVector> start = std::nullopt);

/// Verifies limits, time ordering, and the carry-phase pitch band.
bool trajectory_valid(const ArmTrajectory& traj, const ArmParams& params, double carry_band,
                      std::string* why = nullptr);

struct ArmGains {
  vehicle::PidGains pid{4.0, 0.5, 0.0, 0.5, 0.8};
  double tracking_fault_threshold = 0.3;  // rad
};

struct ArmJointState {
  JointVector q = JointVector::Zero();
  JointVector qdot = JointVector::Zero();
  std::array<vehicle::PidState, kJointCount> pid{};
};

enum class ArmEventKind { Dig, Dump, TrackingFault };

struct ArmEvent {
  ArmEventKind kind = ArmEventKind::Dig;
  double t = 0.0;
  int joint = -1;  // tracking faults only
};

struct ArmStepResult {
  ArmJointState state;
  std::vector<ArmEvent> events;
};

/// Advances the joints from t to t + dt while tracking the trajectory.
ArmStepResult step_arm(const ArmJointState& state, const ArmTrajectory& traj, double t,
                       const ArmGains& gains, double dt);

/// Mass ledger for one deposit, one scoop, and one bin.
struct MassLedger {
  double deposit_remaining = 0.0;
  ScoopState scoop;
  double bin_mass = 0.0;

  double total() const { return deposit_remaining + scoop.carried_mass + bin_mass; }
};

/// Applies a dig or dump event; returns the mass moved.
double apply_event(const ArmEvent& event, MassLedger& ledger, bool bucket_at_deposit = true);

/// Delimited text: header then "t,q1,q2,q3,q4,phase" rows.
std::string export_trajectory(const ArmTrajectory& traj);

}  // namespace lunar::arm
