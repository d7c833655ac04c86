#include "lunar/arm.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <Eigen/Dense>
#include <fmt/format.h>

namespace lunar::arm {

std::array<DHRow, kJointCount> ArmParams::dh_rows() const {
  return {DHRow{0.0, kPi / 2.0, links[0], 0.0}, DHRow{links[1], 0.0, 0.0, 0.0},
          DHRow{links[2], 0.0, 0.0, 0.0}, DHRow{links[3], 0.0, 0.0, 0.0}};
}

bool ArmParams::within_limits(const JointVector& q, double tol) const {
  for (std::size_t i = 0; i < kJointCount; ++i) {
    if (!limits[i].contains(q(static_cast<Eigen::Index>(i)), tol)) return false;
  }
  return true;
}

JointVector ArmParams::clamp(const JointVector& q) const {
  JointVector out = q;
  for (std::size_t i = 0; i < kJointCount; ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    out(k) = std::clamp(out(k), limits[i].lower, limits[i].upper);
  }
  return out;
}

void ArmParams::validate() const {
  if (!(links[1] > 0.0) || !(links[2] > 0.0) || links[0] < 0.0 || links[3] < 0.0)
    throw ConfigError("arm link lengths must be non-negative with l2, l3 > 0");
  if (limits[0].bounded()) throw ConfigError("shoulder azimuth must be unbounded");
  for (std::size_t i = 1; i < kJointCount; ++i) {
    if (!(limits[i].lower < limits[i].upper)) throw ConfigError("joint limit lower >= upper");
  }
  if (std::abs(limits[1].lower + limits[1].upper) < 1e-12)
    throw ConfigError("shoulder elevation range must be non-symmetric");
  if (std::abs(limits[2].lower + limits[2].upper) > 1e-12)
    throw ConfigError("elbow range must be symmetric");
  if (limits[3].lower != 0.0) throw ConfigError("wrist range must start at zero");
  if (!limits[3].contains(dig_range.lower) || !limits[3].contains(dig_range.upper) ||
      !limits[3].contains(drop_range.lower) || !limits[3].contains(drop_range.upper))
    throw ConfigError("dig and drop ranges must lie within the wrist limits");
  if (!within_limits(stow)) throw ConfigError("stow configuration violates joint limits");
}

Eigen::Isometry3d dh_transform(const DHRow& row, double q) {
  const double th = q + row.theta_offset;
  const double ct = std::cos(th), st = std::sin(th);
  const double ca = std::cos(row.alpha), sa = std::sin(row.alpha);
  Eigen::Matrix4d m;
  m << ct, -st * ca, st * sa, row.a * ct,
       st, ct * ca, -ct * sa, row.a * st,
       0.0, sa, ca, row.d,
       0.0, 0.0, 0.0, 1.0;
  return Eigen::Isometry3d(m);
}

FkResult fk(const JointVector& q, const ArmParams& params) {
  FkResult out;
  const auto rows = params.dh_rows();
  out.frames[0] = Eigen::Isometry3d::Identity();
  for (std::size_t i = 0; i < kJointCount; ++i) {
    out.frames[i + 1] = out.frames[i] * dh_transform(rows[i], q(static_cast<Eigen::Index>(i)));
  }
  return out;
}

std::vector<JointVector> ik(const ArmTarget& target, const ArmParams& params) {
  const double l1 = params.links[0], l2 = params.links[1], l3 = params.links[2],
               l4 = params.links[3];
  const Eigen::Vector3d& p = target.position;
  if (!p.allFinite() || !std::isfinite(target.pitch)) throw DomainError("IK target must be finite");

  const double rxy = std::hypot(p.x(), p.y());
  const double azimuth = rxy > 1e-12 ? std::atan2(p.y(), p.x()) : 0.0;
  const double psi = target.pitch;

  // Two azimuth families: facing the target, and facing away with the arm
  // reaching back over the base.
  const std::array<std::pair<double, double>, 2> families{
      std::pair{azimuth, rxy}, std::pair{wrap_angle(azimuth + kPi), -rxy}};

  bool reachable = false;
  std::vector<JointVector> candidates;
  for (const auto& [q1, r] : families) {
    const double rw = r - l4 * std::cos(psi);
    const double hw = p.z() - l1 - l4 * std::sin(psi);
    double c3 = (rw * rw + hw * hw - l2 * l2 - l3 * l3) / (2.0 * l2 * l3);
    if (c3 > 1.0 + 1e-12 || c3 < -1.0 - 1e-12) continue;
    reachable = true;
    c3 = std::clamp(c3, -1.0, 1.0);
    for (double sign : {1.0, -1.0}) {
      const double q3 = sign * std::acos(c3);
      const double q2 = wrap_angle(std::atan2(hw, rw) -
                                   std::atan2(l3 * std::sin(q3), l2 + l3 * std::cos(q3)));
      const double q4 = wrap_angle(psi - q2 - q3);
      candidates.emplace_back(q1, q2, q3, q4);
    }
  }
  if (!reachable) {
    throw UnreachableError(fmt::format("target ({:.4f}, {:.4f}, {:.4f}) outside the reachable annulus",
                                       p.x(), p.y(), p.z()));
  }

  std::vector<JointVector> out;
  for (const auto& q : candidates) {
    if (!params.within_limits(q)) continue;
    const bool duplicate = std::any_of(out.begin(), out.end(), [&](const JointVector& o) {
      return (o - q).norm() < 1e-12;
    });
    if (!duplicate) out.push_back(q);
  }
  if (out.empty()) throw LimitInfeasibleError("all IK branches violate joint limits");
  return out;
}

JointVector ik_nearest(const ArmTarget& target, const ArmParams& params, const JointVector& ref) {
  const auto sols = ik(target, params);
  auto distance = [&](const JointVector& q) {
    JointVector d = q - ref;
    d(0) = wrap_angle(d(0));
    return d.squaredNorm();
  };
  JointVector best = sols.front();
  for (const auto& q : sols) {
    if (distance(q) < distance(best)) best = q;
  }
  // Keep the azimuth continuous with the reference rather than wrapped.
  best(0) = ref(0) + wrap_angle(best(0) - ref(0));
  return best;
}

Matrix64 jacobian(const JointVector& q, const ArmParams& params) {
  const FkResult f = fk(q, params);
  const Eigen::Vector3d pe = f.position();
  Matrix64 j;
  for (std::size_t i = 0; i < kJointCount; ++i) {
    const Eigen::Vector3d z = f.frames[i].rotation().col(2);
    const Eigen::Vector3d pi = f.frames[i].translation();
    const auto c = static_cast<Eigen::Index>(i);
    j.block<3, 1>(0, c) = z.cross(pe - pi);
    j.block<3, 1>(3, c) = z;
  }
  return j;
}

JointVector resolved_rate_step(const JointVector& q, const ArmTarget& target,
                               const ArmParams& params, double gain, double dt) {
  if (!(dt > 0.0)) throw DomainError("resolved-rate dt must be > 0");
  const Matrix64 j = jacobian(q, params);
  Eigen::Matrix4d task;
  task.topRows<3>() = j.topRows<3>();
  task.row(3) << 0.0, 1.0, 1.0, 1.0;

  Eigen::Vector4d error;
  error.head<3>() = target.position - fk(q, params).position();
  error(3) = wrap_angle(target.pitch - bucket_pitch(q));

  const double lambda2 = kResolvedRateDamping * kResolvedRateDamping;
  const Eigen::Matrix4d jjt = task * task.transpose() + lambda2 * Eigen::Matrix4d::Identity();
  const Eigen::Vector4d dq = task.transpose() * jjt.ldlt().solve(gain * error) * dt;
  return params.clamp(q + dq);
}

std::string to_string(Phase p) {
  switch (p) {
    case Phase::Approach: return "approach";
    case Phase::Dig: return "dig";
    case Phase::Carry: return "carry";
    case Phase::Dump: return "dump";
    case Phase::Retract: return "retract";
  }
  return "unknown";
}

std::optional<Phase> phase_from_string(const std::string& s) {
  for (Phase p : {Phase::Approach, Phase::Dig, Phase::Carry, Phase::Dump, Phase::Retract}) {
    if (to_string(p) == s) return p;
  }
  return std::nullopt;
}

namespace {

// Trapezoidal profile for distance `dist` with peak rate v and accel a.
double profile_duration(double dist, double v, double a) {
  if (dist <= 0.0) return 0.0;
  if (dist >= v * v / a) return dist / v + v / a;
  return 2.0 * std::sqrt(dist / a);
}

// Normalised progress s in [0, 1] and its rate at time tau into a segment of
// duration T whose dominant joint travels `dist`.
void profile_eval(double tau, double duration, double dist, double v, double a, double& s,
                  double& sdot) {
  if (duration <= 0.0 || dist <= 0.0) {
    s = duration <= 0.0 ? 1.0 : std::clamp(tau / duration, 0.0, 1.0);
    sdot = duration <= 0.0 ? 0.0 : 1.0 / duration;
    if (dist <= 0.0) sdot = 0.0;
    return;
  }
  tau = std::clamp(tau, 0.0, duration);
  const double min_duration = profile_duration(dist, v, a);
  // Stretch the profile when the segment lasts longer than the minimum.
  const double scale = min_duration / duration;
  const double t = tau * scale;
  double pos, vel;
  if (dist >= v * v / a) {
    const double ta = v / a;
    const double tc = min_duration - ta;
    if (t < ta) {
      pos = 0.5 * a * t * t;
      vel = a * t;
    } else if (t < tc) {
      pos = 0.5 * a * ta * ta + v * (t - ta);
      vel = v;
    } else {
      const double r = min_duration - t;
      pos = dist - 0.5 * a * r * r;
      vel = a * r;
    }
  } else {
    const double th = 0.5 * min_duration;
    if (t < th) {
      pos = 0.5 * a * t * t;
      vel = a * t;
    } else {
      const double r = min_duration - t;
      pos = dist - 0.5 * a * r * r;
      vel = a * r;
    }
  }
  s = pos / dist;
  sdot = vel * scale / dist;
}

double dominant_distance(const JointVector& a, const JointVector& b) {
  return (b - a).cwiseAbs().maxCoeff();
}

constexpr double kMinSegment = 0.1;  // s

class TrajectoryBuilder {
 public:
  TrajectoryBuilder(const JointVector& start, const ScoopPlanConfig& cfg) : cfg_(cfg) {
    traj_.max_rate = cfg.max_joint_rate;
    traj_.max_accel = cfg.max_joint_accel;
    traj_.waypoints.push_back({0.0, start, Phase::Approach});
  }

  void to(const JointVector& q, Phase phase) {
    const auto& last = traj_.waypoints.back();
    const double dist = dominant_distance(last.q, q);
    const double dur =
        std::max(profile_duration(dist, cfg_.max_joint_rate, cfg_.max_joint_accel), kMinSegment);
    traj_.waypoints.push_back({last.t + dur, q, phase});
  }

  const JointVector& last() const { return traj_.waypoints.back().q; }
  ArmTrajectory take() { return std::move(traj_); }

 private:
  ScoopPlanConfig cfg_;
  ArmTrajectory traj_;
};

// Interpolates (azimuth, radius, height) between two base-frame points so
// the path swings around the base instead of cutting through it.
Eigen::Vector3d cylindrical_lerp(const Eigen::Vector3d& a, const Eigen::Vector3d& b, double s) {
  const double az_a = std::atan2(a.y(), a.x()), az_b = std::atan2(b.y(), b.x());
  const double r_a = a.head<2>().norm(), r_b = b.head<2>().norm();
  const double az = az_a + s * wrap_angle(az_b - az_a);
  const double r = r_a + s * (r_b - r_a);
  const double z = a.z() + s * (b.z() - a.z());
  return {r * std::cos(az), r * std::sin(az), z};
}

double cylindrical_length(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  double len = 0.0;
  Eigen::Vector3d prev = a;
  for (int k = 1; k <= 32; ++k) {
    const Eigen::Vector3d p = cylindrical_lerp(a, b, k / 32.0);
    len += (p - prev).norm();
    prev = p;
  }
  return len;
}

// IK for a bucket position with a fixed wrist angle (pitch is then q2+q3+q4).
JointVector position_ik(const Eigen::Vector3d& pos, double wrist, const ArmParams& params,
                        const JointVector& ref) {
  // With the wrist angle fixed, try the pitch implied by each elbow branch.
  ArmTarget probe{pos, 0.0};
  std::vector<JointVector> sols;
  for (double pitch_guess : {ref(1) + ref(2) + wrist, 0.0, -kPi / 2, kPi / 2}) {
    probe.pitch = pitch_guess;
    try {
      for (auto q : ik(probe, params)) {
        q(3) = wrist;
        if (params.links[3] == 0.0 && params.within_limits(q)) sols.push_back(q);
      }
    } catch (const LimitInfeasibleError&) {
    }
  }
  if (params.links[3] != 0.0) {
    // Nonzero bucket length couples position and pitch; solve with the
    // reference pitch instead.
    return ik_nearest({pos, ref(1) + ref(2) + wrist}, params, ref);
  }
  if (sols.empty()) throw LimitInfeasibleError("no limit-feasible branch for the bucket position");
  JointVector best = sols.front();
  auto dist = [&](const JointVector& q) {
    JointVector d = q - ref;
    d(0) = wrap_angle(d(0));
    return d.squaredNorm();
  };
  for (const auto& q : sols) {
    if (dist(q) < dist(best)) best = q;
  }
  best(0) = ref(0) + wrap_angle(best(0) - ref(0));
  return best;
}

}  // namespace

void ArmTrajectory::sample(double t, JointVector& q, JointVector& qdot) const {
  const auto& w = waypoints;
  if (t <= w.front().t) {
    q = w.front().q;
    qdot.setZero();
    return;
  }
  if (t >= w.back().t) {
    q = w.back().q;
    qdot.setZero();
    return;
  }
  auto it = std::upper_bound(w.begin(), w.end(), t,
                             [](double v, const Waypoint& wp) { return v < wp.t; });
  const Waypoint& b = *it;
  const Waypoint& a = *(it - 1);
  const double duration = b.t - a.t;
  const double dist = dominant_distance(a.q, b.q);
  double s, sdot;
  profile_eval(t - a.t, duration, dist, max_rate, max_accel, s, sdot);
  q = a.q + s * (b.q - a.q);
  qdot = sdot * (b.q - a.q);
}

std::optional<double> ArmTrajectory::phase_end(Phase p) const {
  std::optional<double> out;
  for (const auto& wp : waypoints) {
    if (wp.phase == p) out = wp.t;
  }
  return out;
}

int scoop_cycle_count(double deposit_mass, double capacity) {
  if (!(capacity > 0.0)) throw PreconditionError("scoop capacity must be > 0");
  if (!(deposit_mass > 0.0)) throw PreconditionError("deposit mass must be > 0");
  return static_cast<int>(std::ceil(deposit_mass / capacity - 1e-9));
}

std::vector<ArmTrajectory> plan_scoop_cycle(const Eigen::Vector3d& deposit_pos,
                                            const Eigen::Vector3d& bin_pos,
                                            const ScoopState& scoop, double deposit_mass,
                                            const ArmParams& params, const ScoopPlanConfig& cfg,
                                            std::optional<JointVector> start) {
  const int cycles = scoop_cycle_count(deposit_mass, scoop.capacity);
  const JointVector home = start.value_or(params.stow);

  const double carry_z =
      std::max(cfg.ground_z + cfg.approach_height, bin_pos.z());
  const Eigen::Vector3d above_deposit(deposit_pos.x(), deposit_pos.y(), carry_z);

  auto solve = [&](auto&& fn) -> JointVector {
    try {
      return fn();
    } catch (const LimitInfeasibleError& e) {
      throw PlanningFailure(std::string("no limit-feasible path: ") + e.what());
    }
  };

  std::vector<ArmTrajectory> out;
  JointVector current = home;
  for (int c = 0; c < cycles; ++c) {
    TrajectoryBuilder b(current, cfg);

    const JointVector q_above =
        solve([&] { return position_ik(above_deposit, params.dig_range.lower, params, current); });
    b.to(q_above, Phase::Approach);

    const JointVector q_dig_start =
        solve([&] { return position_ik(deposit_pos, params.dig_range.lower, params, q_above); });
    b.to(q_dig_start, Phase::Dig);
    JointVector q_dig_end = q_dig_start;
    q_dig_end(3) = params.dig_range.upper;
    b.to(q_dig_end, Phase::Dig);

    // Hold the bucket's global pitch from here until the dump.
    const double hold = bucket_pitch(q_dig_end);
    const JointVector q_lifted =
        solve([&] { return ik_nearest({above_deposit, hold}, params, q_dig_end); });
    b.to(q_lifted, Phase::Dig);

    const double len = cylindrical_length(above_deposit, bin_pos);
    const int steps = std::max(1, static_cast<int>(std::ceil(len / cfg.carry_step)));
    for (int k = 1; k <= steps; ++k) {
      const Eigen::Vector3d p =
          cylindrical_lerp(above_deposit, bin_pos, static_cast<double>(k) / steps);
      const JointVector q = solve([&] { return ik_nearest({p, hold}, params, b.last()); });
      b.to(q, Phase::Carry);
    }

    JointVector q_dump = b.last();
    q_dump(3) = 0.5 * (params.drop_range.lower + params.drop_range.upper);
    if (!params.within_limits(q_dump)) throw PlanningFailure("dump pose violates joint limits");
    b.to(q_dump, Phase::Dump);

    b.to(home, Phase::Retract);
    ArmTrajectory traj = b.take();

    std::string why;
    if (!trajectory_valid(traj, params, cfg.carry_band, &why)) throw PlanningFailure(why);
    for (std::size_t k = 1; k < traj.waypoints.size(); ++k) {
      const auto& wp = traj.waypoints[k];
      if (wp.phase == Phase::Dig) continue;
      if (fk(wp.q, params).position().z() < cfg.ground_z + cfg.terrain_clearance - 1e-9)
        throw PlanningFailure("bucket below terrain clearance outside the dig phase");
    }
    out.push_back(std::move(traj));
    current = home;
  }
  return out;
}

bool trajectory_valid(const ArmTrajectory& traj, const ArmParams& params, double carry_band,
                      std::string* why) {
  auto fail = [&](const std::string& msg) {
    if (why) *why = msg;
    return false;
  };
  if (traj.waypoints.empty()) return fail("empty trajectory");
  std::optional<double> hold;
  for (std::size_t k = 0; k < traj.waypoints.size(); ++k) {
    const auto& wp = traj.waypoints[k];
    if (k > 0 && !(wp.t > traj.waypoints[k - 1].t)) return fail("waypoint times not increasing");
    if (!params.within_limits(wp.q, 1e-9)) return fail(fmt::format("waypoint {} violates limits", k));
    if (wp.phase == Phase::Carry) {
      if (!hold) hold = bucket_pitch(traj.waypoints[k - 1].q);
      if (std::abs(wrap_angle(bucket_pitch(wp.q) - *hold)) > carry_band + 1e-12)
        return fail(fmt::format("carry waypoint {} leaves the pitch band", k));
    }
  }
  return true;
}

ArmStepResult step_arm(const ArmJointState& state, const ArmTrajectory& traj, double t,
                       const ArmGains& gains, double dt) {
  if (!(dt > 0.0)) throw DomainError("arm step dt must be > 0");
  ArmStepResult out;
  out.state = state;
  const double t_next = t + dt;
  JointVector q_sp, qdot_ff;
  traj.sample(t_next, q_sp, qdot_ff);

  // Track the setpoint at the end of the step.
  for (std::size_t i = 0; i < kJointCount; ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    const auto pid = vehicle::pid_step(gains.pid, q_sp(k), state.q(k), state.pid[i], dt);
    out.state.pid[i] = pid.state;
    const double rate = qdot_ff(k) + pid.output;
    out.state.qdot(k) = rate;
    out.state.q(k) = state.q(k) + rate * dt;
    if (std::abs(out.state.q(k) - q_sp(k)) > gains.tracking_fault_threshold) {
      out.events.push_back({ArmEventKind::TrackingFault, t_next, static_cast<int>(i)});
    }
  }

  for (auto [phase, kind] : {std::pair{Phase::Dig, ArmEventKind::Dig},
                             std::pair{Phase::Dump, ArmEventKind::Dump}}) {
    const auto end = traj.phase_end(phase);
    if (end && *end > t && *end <= t_next) out.events.push_back({kind, *end, -1});
  }
  return out;
}

double apply_event(const ArmEvent& event, MassLedger& ledger, bool bucket_at_deposit) {
  switch (event.kind) {
    case ArmEventKind::Dig: {
      if (!bucket_at_deposit) return 0.0;
      const double room = std::max(0.0, ledger.scoop.capacity - ledger.scoop.carried_mass);
      const double m = std::min(room, ledger.deposit_remaining);
      ledger.deposit_remaining -= m;
      ledger.scoop.carried_mass += m;
      return m;
    }
    case ArmEventKind::Dump: {
      const double m = ledger.scoop.carried_mass;
      ledger.bin_mass += m;
      ledger.scoop.carried_mass = 0.0;
      return m;
    }
    case ArmEventKind::TrackingFault:
      return 0.0;
  }
  return 0.0;
}

std::string export_trajectory(const ArmTrajectory& traj) {
  std::ostringstream os;
  os << "t,q1,q2,q3,q4,phase\n";
  for (const auto& wp : traj.waypoints) {
    os << fmt::format("{:.6f},{:.9f},{:.9f},{:.9f},{:.9f},{}\n", wp.t, wp.q(0), wp.q(1), wp.q(2),
                      wp.q(3), to_string(wp.phase));
  }
  return os.str();
}

}  // namespace lunar::arm
