#include "lunar/vehicle.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

namespace lunar::vehicle {

std::array<Eigen::Vector2d, kWheelCount> RoverGeometry::wheel_positions() const {
  const double hx = 0.5 * wheelbase, hy = 0.5 * track;
  return {Eigen::Vector2d{hx, hy}, Eigen::Vector2d{hx, -hy}, Eigen::Vector2d{-hx, hy},
          Eigen::Vector2d{-hx, -hy}};
}

void RoverGeometry::validate() const {
  if (!(wheelbase > 0.0) || !(track > 0.0) || !(wheel_radius > 0.0) || !(body_clearance > 0.0) ||
      !(body_radius > 0.0))
    throw ConfigError("rover geometry lengths must be > 0");
}

namespace {

bool finite(const DriveCommand& cmd) {
  return std::isfinite(cmd.a) && std::isfinite(cmd.b) && std::isfinite(cmd.c);
}

// Steer/speed for a wheel velocity vector, keeping steer within +-pi/2 by
// reversing the wheel when the vector points backwards.
void set_from_vector(const Eigen::Vector2d& vel, double& steer, double& speed) {
  const double n = vel.norm();
  if (n < 1e-12) {
    steer = 0.0;
    speed = 0.0;
    return;
  }
  steer = std::atan2(vel.y(), vel.x());
  speed = n;
  if (steer > kMaxSteer) {
    steer -= kPi;
    speed = -n;
  } else if (steer < -kMaxSteer) {
    steer += kPi;
    speed = -n;
  }
}

void rigid_body_wheels(double vx, double vy, double omega, const RoverGeometry& geom,
                       WheelSetpoints& out) {
  const auto pos = geom.wheel_positions();
  for (std::size_t i = 0; i < kWheelCount; ++i) {
    const Eigen::Vector2d vel(vx - omega * pos[i].y(), vy + omega * pos[i].x());
    set_from_vector(vel, out.steer[i], out.speed[i]);
  }
}

}  // namespace

WheelSetpoints drive_ik(const DriveCommand& cmd, const RoverGeometry& geom) {
  if (!finite(cmd)) throw InfeasibleCommand("drive command must be finite");
  WheelSetpoints out;
  switch (cmd.mode) {
    case DriveMode::Skid: {
      const double v = cmd.a, omega = cmd.b;
      const double left = v - 0.5 * omega * geom.track;
      const double right = v + 0.5 * omega * geom.track;
      out.speed = {left, right, left, right};
      break;
    }
    case DriveMode::Ackermann: {
      const double v = cmd.a, omega = cmd.b;
      if (std::abs(omega) > 1e-12) {
        const double radius = v / omega;
        if (std::abs(radius) < 0.5 * geom.track) {
          throw InfeasibleCommand("Ackermann turn radius is smaller than half the track");
        }
      }
      // Turn centre on the body lateral axis: front and rear axles steer
      // opposite, which is the rigid-body field of (v, 0, omega).
      rigid_body_wheels(v, 0.0, omega, geom, out);
      break;
    }
    case DriveMode::Crab: {
      double steer = wrap_angle(cmd.b);
      double speed = cmd.a;
      if (steer > kMaxSteer) {
        steer -= kPi;
        speed = -speed;
      } else if (steer < -kMaxSteer) {
        steer += kPi;
        speed = -speed;
      }
      out.steer.fill(steer);
      out.speed.fill(speed);
      break;
    }
    case DriveMode::Omni:
      rigid_body_wheels(cmd.a, cmd.b, cmd.c, geom, out);
      break;
  }

  double peak = 0.0;
  for (double s : out.speed) peak = std::max(peak, std::abs(s));
  if (peak > kMaxWheelSpeed) {
    const double scale = kMaxWheelSpeed / peak;
    for (double& s : out.speed) s *= scale;
  }
  for (double s : out.steer) {
    if (std::abs(s) > kMaxSteer + 1e-12) throw InfeasibleCommand("steer angle beyond +-pi/2");
  }
  return out;
}

BodyTwist wheels_to_twist(const WheelSetpoints& wheels, DriveMode mode,
                          const RoverGeometry& geom) {
  const auto pos = geom.wheel_positions();
  BodyTwist tw;
  if (mode == DriveMode::Skid) {
    Eigen::Matrix<double, 4, 2> a;
    Eigen::Vector4d b;
    for (std::size_t i = 0; i < kWheelCount; ++i) {
      const double c = std::cos(wheels.steer[i]), s = std::sin(wheels.steer[i]);
      const auto r = static_cast<Eigen::Index>(i);
      a(r, 0) = c;
      a(r, 1) = -c * pos[i].y() + s * pos[i].x();
      b(r) = wheels.speed[i];
    }
    const Eigen::Vector2d sol = (a.transpose() * a).ldlt().solve(a.transpose() * b);
    tw.vx = sol(0);
    tw.omega = sol(1);
    return tw;
  }
  Eigen::Matrix<double, 8, 3> a = Eigen::Matrix<double, 8, 3>::Zero();
  Eigen::Matrix<double, 8, 1> b;
  for (std::size_t i = 0; i < kWheelCount; ++i) {
    const auto r = static_cast<Eigen::Index>(2 * i);
    a(r, 0) = 1.0;
    a(r, 2) = -pos[i].y();
    b(r) = wheels.speed[i] * std::cos(wheels.steer[i]);
    a(r + 1, 1) = 1.0;
    a(r + 1, 2) = pos[i].x();
    b(r + 1) = wheels.speed[i] * std::sin(wheels.steer[i]);
  }
  const Eigen::Vector3d sol = (a.transpose() * a).ldlt().solve(a.transpose() * b);
  tw.vx = sol(0);
  tw.vy = sol(1);
  tw.omega = sol(2);
  return tw;
}

PidOutput pid_step(const PidGains& gains, double setpoint, double measured, const PidState& state,
                   double dt) {
  const double error = setpoint - measured;
  PidOutput out;
  out.state.integral =
      std::clamp(state.integral + error * dt, -gains.integral_clamp, gains.integral_clamp);
  const double derivative = state.primed ? (error - state.prev_error) / dt : 0.0;
  out.state.prev_error = error;
  out.state.primed = true;
  const double raw = gains.kp * error + gains.ki * out.state.integral + gains.kd * derivative;
  out.output = std::clamp(raw, -gains.output_clamp, gains.output_clamp);
  return out;
}

Pose2 integrate_twist(const Pose2& pose, const BodyTwist& twist, double dt) {
  const double dth = twist.omega * dt;
  double bx, by;
  if (std::abs(dth) < 1e-9) {
    bx = twist.vx * dt - 0.5 * twist.vy * dth * dt;
    by = twist.vy * dt + 0.5 * twist.vx * dth * dt;
  } else {
    const double s = std::sin(dth) / twist.omega;
    const double c = (1.0 - std::cos(dth)) / twist.omega;
    bx = s * twist.vx - c * twist.vy;
    by = c * twist.vx + s * twist.vy;
  }
  const double ct = std::cos(pose.theta), st = std::sin(pose.theta);
  return {pose.x + ct * bx - st * by, pose.y + st * bx + ct * by, wrap_angle(pose.theta + dth)};
}

double slip_at(const world::World& world, const Pose2& pose, const SlipConfig& cfg) {
  if (cfg.fixed) return std::clamp(*cfg.fixed, 0.0, 1.0);
  if (!world.heightfield.contains(pose.x, pose.y)) return 0.0;
  const double slope = world.heightfield.gradient_at(pose.x, pose.y).norm();  // tan of the slope
  return std::clamp(cfg.k * slope, 0.0, cfg.max_slip);
}

namespace {

// Positive when the body overlaps an obstacle rock; index of the worst rock.
double penetration(const world::World& world, const RoverGeometry& geom, const Pose2& pose,
                   int& rock) {
  double worst = -std::numeric_limits<double>::infinity();
  rock = -1;
  for (std::size_t k = 0; k < world.rocks.size(); ++k) {
    const auto& r = world.rocks[k];
    if (r.radius <= geom.body_clearance) continue;
    const double depth = geom.body_radius + r.radius - (r.center.head<2>() - pose.xy()).norm();
    if (depth > worst) {
      worst = depth;
      rock = static_cast<int>(k);
    }
  }
  return worst;
}

bool inside_terrain(const world::World& world, const RoverGeometry& geom, const Pose2& pose) {
  const auto& hf = world.heightfield;
  const double m = geom.body_radius;
  return pose.x >= hf.min_x() + m && pose.x <= hf.max_x() - m && pose.y >= hf.min_y() + m &&
         pose.y <= hf.max_y() - m;
}

}  // namespace

std::optional<int> colliding_rock(const world::World& world, const RoverGeometry& geom,
                                  const Pose2& pose) {
  int rock = -1;
  if (penetration(world, geom, pose, rock) > 0.0) return rock;
  return std::nullopt;
}

StepResult step_vehicle(const RoverState& state, const WheelSetpoints& setpoints, DriveMode mode,
                        const RoverGeometry& geom, const world::World& world,
                        const SlipConfig& slip_cfg, const ActuatorConfig& act, double dt) {
  if (!(dt > 0.0 && dt <= 0.1)) throw DomainError("vehicle step dt must be in (0, 0.1]");
  StepResult result;
  RoverState& next = result.state;
  next = state;
  next.drive_mode = mode;

  const double alpha = act.time_constant > 0.0 ? 1.0 - std::exp(-dt / act.time_constant) : 1.0;
  for (std::size_t i = 0; i < kWheelCount; ++i) {
    const double sp_speed = std::clamp(setpoints.speed[i], -kMaxWheelSpeed, kMaxWheelSpeed);
    const double sp_steer = std::clamp(setpoints.steer[i], -kMaxSteer, kMaxSteer);
    if (act.time_constant <= 0.0) {
      next.wheels.speed[i] = sp_speed;
      next.wheels.steer[i] = sp_steer;
      continue;
    }
    // Feed-forward setpoint plus PID correction drives a first-order lag.
    const auto sp = pid_step(act.speed_pid, sp_speed, state.wheels.speed[i], state.speed_pid[i], dt);
    const auto st = pid_step(act.steer_pid, sp_steer, state.wheels.steer[i], state.steer_pid[i], dt);
    next.speed_pid[i] = sp.state;
    next.steer_pid[i] = st.state;
    const double u_speed = sp_speed + sp.output;
    const double u_steer = sp_steer + st.output;
    next.wheels.speed[i] = std::clamp(state.wheels.speed[i] + alpha * (u_speed - state.wheels.speed[i]),
                                      -kMaxWheelSpeed, kMaxWheelSpeed);
    next.wheels.steer[i] = std::clamp(state.wheels.steer[i] + alpha * (u_steer - state.wheels.steer[i]),
                                      -kMaxSteer, kMaxSteer);
  }

  const BodyTwist commanded = wheels_to_twist(next.wheels, mode, geom);
  next.slip = slip_at(world, state.pose, slip_cfg);
  const double keep = 1.0 - next.slip;
  BodyTwist effective{commanded.vx * keep, commanded.vy * keep, commanded.omega * keep};
  for (std::size_t i = 0; i < kWheelCount; ++i) next.wheel_travel[i] = next.wheels.speed[i] * dt;

  Pose2 pose = integrate_twist(state.pose, effective, dt);

  int rock_before = -1, rock_after = -1;
  const double pen_before = penetration(world, geom, state.pose, rock_before);
  const double pen_after = penetration(world, geom, pose, rock_after);
  const bool blocked_rock = pen_after > 0.0 && !(pen_before > 0.0 && pen_after < pen_before);
  const bool blocked_edge = !inside_terrain(world, geom, pose);
  if (blocked_rock || blocked_edge) {
    result.collided = true;
    result.rock_index = blocked_rock ? rock_after : -1;
    double lo = 0.0, hi = 1.0;
    const bool start_free = pen_before <= 0.0 && inside_terrain(world, geom, state.pose);
    if (start_free) {
      for (int k = 0; k < 30; ++k) {
        const double mid = 0.5 * (lo + hi);
        const Pose2 p = integrate_twist(state.pose, effective, mid * dt);
        int dummy;
        if (penetration(world, geom, p, dummy) > 0.0 || !inside_terrain(world, geom, p)) {
          hi = mid;
        } else {
          lo = mid;
        }
      }
    }
    pose = integrate_twist(state.pose, effective, lo * dt);
    effective = BodyTwist{};
  }

  next.pose = pose;
  const BodyTwist prev = state.twist;
  next.accel = {(effective.vx - prev.vx) / dt - effective.omega * effective.vy,
                (effective.vy - prev.vy) / dt + effective.omega * effective.vx};
  next.twist = effective;
  return result;
}

SensorPose lidar_pose(const world::World& world, const RoverGeometry& geom, const Pose2& pose) {
  const Eigen::Vector2d xy = body_to_world(pose, geom.lidar_mount.head<2>());
  const double ground = world.heightfield.contains(pose.x, pose.y)
                            ? world.heightfield.height_at(pose.x, pose.y)
                            : 0.0;
  return {{xy.x(), xy.y(), ground + geom.lidar_mount.z()}, pose.theta};
}

SensorPose stereo_pose(const world::World& world, const RoverGeometry& geom, const Pose2& pose) {
  const Eigen::Vector2d xy = body_to_world(pose, geom.stereo_mount.head<2>());
  const double ground = world.heightfield.contains(pose.x, pose.y)
                            ? world.heightfield.height_at(pose.x, pose.y)
                            : 0.0;
  return {{xy.x(), xy.y(), ground + geom.stereo_mount.z()}, pose.theta};
}

LidarScan simulate_lidar(const world::World& world, const SensorPose& pose, const LidarConfig& cfg,
                         Rng& rng) {
  LidarScan scan;
  scan.start_angle = -0.5 * cfg.fov;
  scan.angular_step = cfg.angular_step;
  scan.max_range = cfg.max_range;
  const auto beams = static_cast<std::size_t>(std::llround(cfg.fov / cfg.angular_step)) + 1;
  scan.ranges.resize(beams);
  for (std::size_t k = 0; k < beams; ++k) {
    const double a = pose.yaw + scan.angle(k);
    const Eigen::Vector3d dir(std::cos(a), std::sin(a), 0.0);
    const auto hit = world::raycast(world, pose.position, dir, cfg.max_range);
    const double noise = rng.normal(0.0, cfg.range_sigma);
    scan.ranges[k] = hit ? std::clamp(hit->range + noise, 1e-3, cfg.max_range) : kNoReturn;
  }
  return scan;
}

perception::StereoFrame simulate_stereo(const world::World& world, const SensorPose& camera,
                                        const NoiseConfig& cfg, Rng& rng) {
  std::vector<world::Landmark> landmarks;
  landmarks.reserve(world.rocks.size() + world.ground_features.size() + 2);
  for (std::size_t k = 0; k < world.rocks.size(); ++k) {
    const auto& r = world.rocks[k];
    landmarks.push_back({world::kRockLandmarkBase + static_cast<int>(k),
                         r.center + Eigen::Vector3d(0.0, 0.0, r.radius)});
  }
  landmarks.push_back({world::kCubesatLandmarkId, world.cubesat_position});
  const auto& home = world.home_base_pose;
  if (world.heightfield.contains(home.x, home.y)) {
    landmarks.push_back({world::kHomeMarkerLandmarkId,
                         {home.x, home.y,
                          world.heightfield.height_at(home.x, home.y) + world::kHomeMarkerHeight}});
  }
  landmarks.insert(landmarks.end(), world.ground_features.begin(), world.ground_features.end());

  const double c = std::cos(camera.yaw), s = std::sin(camera.yaw);
  const auto& spec = cfg.stereo;
  perception::StereoFrame frame;
  for (const auto& lm : landmarks) {
    const Eigen::Vector3d d = lm.position - camera.position;
    const Eigen::Vector3d sensor(c * d.x() + s * d.y(), -s * d.x() + c * d.y(), d.z());
    if (sensor.x() < cfg.stereo_min_range || sensor.x() > cfg.stereo_max_range) continue;
    const Eigen::Vector3d cam = perception::sensor_to_camera(sensor);
    auto px = perception::project(cam, spec);
    if (std::abs(px.u_left) > spec.half_width || std::abs(px.u_right) > spec.half_width ||
        std::abs(px.v_left) > spec.half_height)
      continue;
    if (!world::line_of_sight(world, camera.position, lm.position, 0.05)) continue;
    px.u_left += rng.normal(0.0, spec.pixel_sigma);
    px.u_right += rng.normal(0.0, spec.pixel_sigma);
    const double nv = rng.normal(0.0, spec.pixel_sigma);
    px.v_left += nv;
    px.v_right += nv;
    px.landmark_id = lm.id;
    frame.pairs.push_back(px);
  }
  return frame;
}

Proprioception simulate_proprioception(const RoverState& true_state, const RoverGeometry& geom,
                                      const NoiseConfig& noise, Rng& rng, double dt) {
  Proprioception out;
  out.imu.gyro_z = true_state.twist.omega + noise.gyro_bias + rng.normal(0.0, noise.gyro_sigma);
  const double ax = rng.normal(0.0, noise.accel_sigma);
  const double ay = rng.normal(0.0, noise.accel_sigma);
  out.imu.accel = true_state.accel + Eigen::Vector2d(ax, ay);

  out.encoders.dt = dt;
  for (std::size_t i = 0; i < kWheelCount; ++i) {
    out.encoders.rotation[i] =
        true_state.wheel_travel[i] / geom.wheel_radius + rng.normal(0.0, noise.encoder_sigma);
    out.encoders.steer[i] = true_state.wheels.steer[i];
  }
  return out;
}

SensorBundle simulate_sensors(const world::World& world, const RoverState& true_state,
                              const RoverGeometry& geom, const NoiseConfig& noise, Rng& rng,
                              double dt) {
  SensorBundle out;
  out.lidar = simulate_lidar(world, lidar_pose(world, geom, true_state.pose), noise.lidar, rng);
  auto prop = simulate_proprioception(true_state, geom, noise, rng, dt);
  out.imu = prop.imu;
  out.encoders = prop.encoders;
  out.stereo = simulate_stereo(world, stereo_pose(world, geom, true_state.pose), noise, rng);
  return out;
}

BodyTwist encoder_twist(const EncoderReading& enc, DriveMode mode, const RoverGeometry& geom) {
  WheelSetpoints w;
  for (std::size_t i = 0; i < kWheelCount; ++i) {
    w.speed[i] = enc.rotation[i] * geom.wheel_radius / enc.dt;
    w.steer[i] = enc.steer[i];
  }
  return wheels_to_twist(w, mode, geom);
}

}  // namespace lunar::vehicle
