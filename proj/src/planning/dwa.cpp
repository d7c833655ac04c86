#include <algorithm>
#include <cmath>
#include <limits>

#include "lunar/planning.hpp"
#include "lunar/vehicle.hpp"

namespace lunar::planning {

void DwaConfig::validate() const {
  if (v_samples < 1 || omega_samples < 1 || vy_samples < 1)
    throw ConfigError("DWA sample counts must be >= 1");
  if (!(horizon > 0.0) || !(sim_step > 0.0) || !(control_period > 0.0))
    throw ConfigError("DWA horizon, sim step, and control period must be > 0");
  if (w_heading < 0.0 || w_clearance < 0.0 || w_velocity < 0.0)
    throw ConfigError("DWA weights must be >= 0");
  if (!(v_max > 0.0) || v_max > vehicle::kMaxWheelSpeed + 1e-12)
    throw ConfigError("DWA v_max must lie in (0, 1.5]");
  if (v_min > v_max || !(omega_max > 0.0) || vy_max < 0.0 || !(accel_v > 0.0) ||
      !(accel_omega > 0.0) || !(clearance_cap > 0.0) || carrot_distance < 0.0)
    throw ConfigError("invalid DWA velocity or acceleration bounds");
}

Eigen::Vector2d carrot_point(const Path& path, const Eigen::Vector2d& p, double distance) {
  if (path.empty()) return p;
  const auto& poses = path.poses;
  std::size_t nearest = 0;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < poses.size(); ++k) {
    const double d = (poses[k].xy() - p).squaredNorm();
    if (d < best) {
      best = d;
      nearest = k;
    }
  }
  double left = distance;
  for (std::size_t k = nearest; k + 1 < poses.size(); ++k) {
    const Eigen::Vector2d a = poses[k].xy(), b = poses[k + 1].xy();
    const double seg = (b - a).norm();
    if (seg >= left && seg > 0.0) return a + (b - a) * (left / seg);
    left -= seg;
  }
  return poses.back().xy();
}

namespace {

std::vector<double> window_samples(double current, double accel, double period, double lo_limit,
                                   double hi_limit, int count) {
  const double lo = std::max(lo_limit, current - accel * period);
  const double hi = std::min(hi_limit, current + accel * period);
  std::vector<double> out;
  if (lo > hi) {
    // Current velocity is outside the limits: only the nearest bound is reachable.
    out.push_back(current > hi_limit ? hi_limit : lo_limit);
    return out;
  }
  if (count == 1) {
    out.push_back(std::clamp(0.0, lo, hi) == 0.0 ? 0.0 : 0.5 * (lo + hi));
    return out;
  }
  for (int i = 0; i < count; ++i) out.push_back(lo + (hi - lo) * i / (count - 1));
  if (lo <= 0.0 && hi >= 0.0) {
    // Stopping and driving straight are always candidates when reachable.
    auto it = std::min_element(out.begin(), out.end(),
                               [](double a, double b) { return std::abs(a) < std::abs(b); });
    *it = 0.0;
  }
  return out;
}

}  // namespace

std::vector<DwaSample> dwa_evaluate(const Costmap& map, const RobotState& state, const Path& path,
                                    const DwaConfig& cfg, const std::vector<double>* distances) {
  cfg.validate();
  std::vector<double> own;
  if (!distances) {
    own = mapping::distance_field(map, mapping::kLethalCost);
    distances = &own;
  }
  const auto dist_at = [&](const CellIndex& c) { return (*distances)[map.index(c.ix, c.iy)]; };

  const auto vs = window_samples(state.v, cfg.accel_v, cfg.control_period, cfg.v_min, cfg.v_max,
                                 cfg.v_samples);
  const auto ws = window_samples(state.omega, cfg.accel_omega, cfg.control_period, -cfg.omega_max,
                                 cfg.omega_max, cfg.omega_samples);
  const auto vys = cfg.omni ? window_samples(state.vy, cfg.accel_v, cfg.control_period, -cfg.vy_max,
                                             cfg.vy_max, cfg.vy_samples)
                            : std::vector<double>{0.0};

  const Eigen::Vector2d carrot = carrot_point(path, state.pose.xy(), cfg.carrot_distance);
  const auto start_cell = map.cell_of(state.pose.xy());
  // A robot already inside the inflated zone may only move without getting
  // closer to an obstacle.
  const bool escaping = !start_cell || !map.passable(start_cell->ix, start_cell->iy);
  const double start_dist = start_cell ? dist_at(*start_cell) : 0.0;
  const int steps = static_cast<int>(std::ceil(cfg.horizon / cfg.sim_step - 1e-9));

  std::vector<DwaSample> out;
  for (double v : vs) {
    for (double vy : vys) {
      for (double w : ws) {
        DwaSample s;
        s.cmd = {v, vy, w};
        // Wheel feasibility: speeds above the wheel limit are not commandable.
        const double speed = std::hypot(v, vy);
        s.admissible = speed <= vehicle::kMaxWheelSpeed + 1e-12;
        s.trajectory.push_back(state.pose);
        double min_dist = std::numeric_limits<double>::infinity();
        Pose2 pose = state.pose;
        for (int k = 0; k < steps && s.admissible; ++k) {
          const double dt = std::min(cfg.sim_step, cfg.horizon - k * cfg.sim_step);
          pose = vehicle::integrate_twist(pose, {v, vy, w}, dt);
          s.trajectory.push_back(pose);
          const auto c = map.cell_of(pose.xy());
          if (!c) {
            s.admissible = false;
            break;
          }
          const double d = dist_at(*c);
          if (escaping) {
            if (map.cost(c->ix, c->iy) == mapping::kLethalCost || d < start_dist - 1e-9)
              s.admissible = false;
          } else if (!map.passable(c->ix, c->iy)) {
            s.admissible = false;
          }
          min_dist = std::min(min_dist, d);
        }
        if (s.admissible) {
          const Pose2& end = s.trajectory.back();
          double heading = end.theta;
          if (cfg.omni && speed > 1e-12) heading = end.theta + std::atan2(vy, v);
          const Eigen::Vector2d to_carrot = carrot - end.xy();
          const double bearing = to_carrot.norm() > 1e-9 ? std::atan2(to_carrot.y(), to_carrot.x())
                                                        : heading;
          s.heading = 1.0 - std::abs(wrap_angle(bearing - heading)) / kPi;
          s.clearance = std::min(min_dist, cfg.clearance_cap) / cfg.clearance_cap;
          s.velocity = speed / cfg.v_max;
          s.score = cfg.w_heading * s.heading + cfg.w_clearance * s.clearance +
                    cfg.w_velocity * s.velocity;
        }
        out.push_back(std::move(s));
      }
    }
  }
  return out;
}

DwaResult dwa_step(const Costmap& map, const RobotState& state, const Path& path,
                   const DwaConfig& cfg, const std::vector<double>* distances) {
  const auto samples = dwa_evaluate(map, state, path, cfg, distances);
  DwaResult out;
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const auto& s = samples[k];
    if (!s.admissible) continue;
    if (out.chosen >= 0) {
      const auto& best = samples[static_cast<std::size_t>(out.chosen)];
      if (s.score < best.score) continue;
      if (s.score == best.score && std::abs(s.cmd.omega) >= std::abs(best.cmd.omega)) continue;
    }
    out.chosen = static_cast<int>(k);
  }
  if (out.chosen >= 0) {
    const auto& best = samples[static_cast<std::size_t>(out.chosen)];
    out.admissible = true;
    out.cmd = best.cmd;
    out.trajectory = best.trajectory;
  }
  return out;
}

std::vector<VelocityCommand> recovery_rotate(double omega, double dt) {
  if (omega == 0.0 || !std::isfinite(omega)) throw DomainError("recovery rate must be nonzero");
  if (!(dt > 0.0)) throw DomainError("recovery dt must be > 0");
  const auto n = static_cast<std::size_t>(std::ceil(kTwoPi / (std::abs(omega) * dt) - 1e-9));
  return std::vector<VelocityCommand>(n, VelocityCommand{0.0, 0.0, omega});
}

}  // namespace lunar::planning
