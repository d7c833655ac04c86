#pragma once

#include <array>
#include <limits>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "lunar/common.hpp"
#include "lunar/perception.hpp"
#include "lunar/rng.hpp"
#include "lunar/world.hpp"

namespace lunar::vehicle {

inline constexpr double kMaxWheelSpeed = 1.5;          // m/s
inline constexpr double kMaxSteer = kPi / 2.0;         // rad
inline constexpr std::size_t kWheelCount = 4;

// Wheel order: front-left, front-right, rear-left, rear-right.
enum Wheel : std::size_t { kFrontLeft = 0, kFrontRight = 1, kRearLeft = 2, kRearRight = 3 };

enum class DriveMode { Skid, Ackermann, Crab, Omni };

struct RoverGeometry {
  double wheelbase = 1.2;       // L, axle separation
  double track = 1.0;           // W, left-right wheel separation
  double wheel_radius = 0.25;
  double body_clearance = 0.3;  // rocks protruding less than this are driven over
  double body_radius = 0.7;     // collision circle
  Eigen::Vector3d lidar_mount{0.5, 0.0, 0.25};
  Eigen::Vector3d stereo_mount{0.6, 0.0, 0.8};

  std::array<Eigen::Vector2d, kWheelCount> wheel_positions() const;
  void validate() const;
};

struct WheelSetpoints {
  std::array<double, kWheelCount> steer{};
  std::array<double, kWheelCount> speed{};
};

struct DriveCommand {
  DriveMode mode = DriveMode::Skid;
  // Skid/Ackermann: (v, omega). Crab: (speed, heading). Omni: (vx, vy, omega).
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;

  static DriveCommand skid(double v, double omega) { return {DriveMode::Skid, v, omega, 0.0}; }
  static DriveCommand ackermann(double v, double omega) {
    return {DriveMode::Ackermann, v, omega, 0.0};
  }
  static DriveCommand crab(double speed, double heading) {
    return {DriveMode::Crab, speed, heading, 0.0};
  }
  static DriveCommand omni(double vx, double vy, double omega) {
    return {DriveMode::Omni, vx, vy, omega};
  }
};

struct BodyTwist {
  double vx = 0.0;
  double vy = 0.0;
  double omega = 0.0;
};

/// Wheel setpoints for a drive command. Speeds are scaled uniformly when any
/// exceeds the wheel limit. Throws InfeasibleCommand for Ackermann turns
/// tighter than half the track.
WheelSetpoints drive_ik(const DriveCommand& cmd, const RoverGeometry& geom);

/// Least-squares body twist from wheel states. Skid mode uses only the
/// rolling constraints (wheels slide sideways); steered modes add the
/// no-side-slip constraints.
BodyTwist wheels_to_twist(const WheelSetpoints& wheels, DriveMode mode, const RoverGeometry& geom);

struct PidGains {
  double kp = 0.0;
  double ki = 0.0;
  double kd = 0.0;
  double integral_clamp = 1.0;
  double output_clamp = 1.0;
};

struct PidState {
  double integral = 0.0;
  double prev_error = 0.0;
  bool primed = false;
};

struct PidOutput {
  double output = 0.0;
  PidState state;
};

PidOutput pid_step(const PidGains& gains, double setpoint, double measured, const PidState& state,
                   double dt);

struct ActuatorConfig {
  double time_constant = 0.2;  // first-order lag, s; 0 means instantaneous tracking
  PidGains speed_pid{0.8, 0.5, 0.0, 0.5, 1.0};
  PidGains steer_pid{0.8, 0.5, 0.0, 0.5, 1.0};
};

struct SlipConfig {
  double k = 0.5;
  double max_slip = 0.6;
  std::optional<double> fixed;  // overrides the slope model when set
};

struct RoverState {
  Pose2 pose;
  WheelSetpoints wheels;
  std::array<PidState, kWheelCount> speed_pid{};
  std::array<PidState, kWheelCount> steer_pid{};
  BodyTwist twist;          // effective (after slip) body twist
  Eigen::Vector2d accel = Eigen::Vector2d::Zero();  // body-frame acceleration
  DriveMode drive_mode = DriveMode::Skid;
  double slip = 0.0;
  std::array<double, kWheelCount> wheel_travel{};  // rolled distance in the last step, m
};

struct StepResult {
  RoverState state;
  bool collided = false;
  int rock_index = -1;
};

double slip_at(const world::World& world, const Pose2& pose, const SlipConfig& cfg);

StepResult step_vehicle(const RoverState& state, const WheelSetpoints& setpoints, DriveMode mode,
                        const RoverGeometry& geom, const world::World& world,
                        const SlipConfig& slip_cfg, const ActuatorConfig& act, double dt);

/// Exact constant-twist integration of a planar pose.
Pose2 integrate_twist(const Pose2& pose, const BodyTwist& twist, double dt);

/// True when the rover body circle at `pose` overlaps a rock it cannot clear.
std::optional<int> colliding_rock(const world::World& world, const RoverGeometry& geom,
                                  const Pose2& pose);

inline constexpr double kNoReturn = std::numeric_limits<double>::infinity();

struct LidarConfig {
  double fov = 270.0 * kPi / 180.0;
  double angular_step = kPi / 180.0;
  double max_range = 20.0;
  double range_sigma = 0.02;
};

struct LidarScan {
  double start_angle = 0.0;  // sensor frame, rad
  double angular_step = 0.0;
  double max_range = 0.0;
  std::vector<double> ranges;  // kNoReturn when nothing is hit

  std::size_t size() const { return ranges.size(); }
  double angle(std::size_t k) const { return start_angle + static_cast<double>(k) * angular_step; }
};

struct ImuReading {
  double gyro_z = 0.0;               // rad/s
  Eigen::Vector2d accel = Eigen::Vector2d::Zero();  // body frame, m/s^2
};

struct EncoderReading {
  std::array<double, kWheelCount> rotation{};  // wheel angle increment, rad
  std::array<double, kWheelCount> steer{};     // steering encoder, rad
  double dt = 0.0;
};

struct NoiseConfig {
  LidarConfig lidar;
  double gyro_sigma = 0.002;
  double gyro_bias = 0.0;
  double accel_sigma = 0.02;
  double encoder_sigma = 0.0;  // rad per step
  perception::StereoSpec stereo;
  double stereo_max_range = 10.0;
  double stereo_min_range = 0.5;
};

struct SensorBundle {
  LidarScan lidar;
  ImuReading imu;
  EncoderReading encoders;
  perception::StereoFrame stereo;
};

/// Camera pose of the stereo rig in the world (level, yaw from the body).
SensorPose stereo_pose(const world::World& world, const RoverGeometry& geom, const Pose2& pose);
SensorPose lidar_pose(const world::World& world, const RoverGeometry& geom, const Pose2& pose);

LidarScan simulate_lidar(const world::World& world, const SensorPose& pose, const LidarConfig& cfg,
                         Rng& rng);

perception::StereoFrame simulate_stereo(const world::World& world, const SensorPose& camera,
                                        const NoiseConfig& cfg, Rng& rng);

struct Proprioception {
  ImuReading imu;
  EncoderReading encoders;
};

/// IMU and wheel encoders only; cheaper than the full bundle.
Proprioception simulate_proprioception(const RoverState& true_state, const RoverGeometry& geom,
                                      const NoiseConfig& noise, Rng& rng, double dt);

SensorBundle simulate_sensors(const world::World& world, const RoverState& true_state,
                              const RoverGeometry& geom, const NoiseConfig& noise, Rng& rng,
                              double dt);

/// Planar odometry from an encoder reading (inverse of the encoder model).
BodyTwist encoder_twist(const EncoderReading& enc, DriveMode mode, const RoverGeometry& geom);

}  // namespace lunar::vehicle
