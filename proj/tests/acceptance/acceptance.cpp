// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <queue>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "lunar/arm.hpp"
#include "lunar/cli.hpp"
#include "lunar/localization.hpp"
#include "lunar/mapping.hpp"
#include "lunar/perception.hpp"
#include "lunar/planning.hpp"
#include "lunar/rng.hpp"

using namespace lunar;
namespace fs = std::filesystem;

namespace {

const std::string kFixtures = LUNAR_FIXTURES;

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok && pass) detail = what;
    pass = pass && ok;
  }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "lunar_acceptance" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// ---- 1: kinematics ----

Eigen::Vector3d fk_closed_form(const arm::JointVector& q, const arm::ArmParams& p) {
  const double l1 = p.links[0], l2 = p.links[1], l3 = p.links[2], l4 = p.links[3];
  const double a = q(1), b = q(1) + q(2), c = q(1) + q(2) + q(3);
  const double r = l2 * std::cos(a) + l3 * std::cos(b) + l4 * std::cos(c);
  const double z = l1 + l2 * std::sin(a) + l3 * std::sin(b) + l4 * std::sin(c);
  return {r * std::cos(q(0)), r * std::sin(q(0)), z};
}

arm::JointVector random_q(Rng& rng, const arm::ArmParams& p) {
  arm::JointVector q;
  q(0) = rng.uniform(-kPi, kPi);
  for (int i = 1; i < 4; ++i) q(i) = rng.uniform(p.limits[i].lower, p.limits[i].upper);
  return q;
}

Outcome kinematics() {
  Outcome o;
  const arm::ArmParams p;
  const Eigen::Vector3d zero = arm::fk(arm::JointVector::Zero(), p).position();
  o.require((zero - Eigen::Vector3d(4.0, 0.0, 0.3)).norm() <= 1e-12, "fk(0) != (4, 0, 0.3)");

  Rng rng(101);
  double worst_fk = 0.0, worst_ik = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const auto q = random_q(rng, p);
    const arm::ArmTarget t{arm::fk(q, p).position(), arm::bucket_pitch(q)};
    const auto sols = arm::ik(t, p);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& s : sols) {
      worst_fk = std::max(worst_fk, (arm::fk(s, p).position() - t.position).norm());
      arm::JointVector d = s - q;
      d(0) = wrap_angle(d(0));
      best = std::min(best, d.norm());
    }
    worst_ik = std::max(worst_ik, best);
  }
  o.require(worst_fk <= 1e-9, fmt::format("fk(ik) error {:.3g}", worst_fk));
  o.require(worst_ik <= 1e-9, fmt::format("ik(fk) error {:.3g}", worst_ik));

  double worst_j = 0.0;
  const double h = 1e-6;
  for (int k = 0; k < 500; ++k) {
    const auto q = random_q(rng, p);
    const auto j = arm::jacobian(q, p);
    Eigen::Matrix<double, 3, 4> fd;
    for (int c = 0; c < 4; ++c) {
      arm::JointVector qp = q, qm = q;
      qp(c) += h;
      qm(c) -= h;
      fd.col(c) = (fk_closed_form(qp, p) - fk_closed_form(qm, p)) / (2.0 * h);
    }
    worst_j = std::max(worst_j, (j.topRows<3>() - fd).norm() / fd.norm());
  }
  o.require(worst_j <= 1e-5, fmt::format("jacobian relative error {:.3g}", worst_j));
  if (o.pass)
    o.detail = fmt::format("fk/ik {:.1e}/{:.1e}, jacobian {:.1e}", worst_fk, worst_ik, worst_j);
  return o;
}

// ---- 2: stereo ----

Outcome stereo() {
  Outcome o;
  perception::StereoSpec unit;
  unit.focal = 1.0;
  unit.half_baseline = 0.1;
  const auto px = perception::project({0.4, 0.2, 2.0}, unit);
  o.require(std::abs(px.u_left - 0.15) <= 1e-15 && std::abs(px.u_right - 0.25) <= 1e-15 &&
                std::abs(px.v_left - 0.1) <= 1e-15,
            "worked projection differs");
  const auto back = perception::triangulate({0.15, 0.1, 0.25, 0.1, -1}, unit);
  o.require((back - Eigen::Vector3d(0.4, 0.2, 2.0)).norm() <= 1e-15, "worked triangulation differs");

  const perception::StereoSpec spec;
  Rng rng(102);
  double worst = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const double z = rng.uniform(0.5, 20.0);
    const Eigen::Vector3d p(rng.uniform(-0.7, 0.7) * z, rng.uniform(-0.5, 0.5) * z, z);
    worst = std::max(worst, (perception::triangulate(perception::project(p, spec), spec) - p).norm());
  }
  o.require(worst <= 1e-12, fmt::format("round trip error {:.3g}", worst));
  if (o.pass) o.detail = fmt::format("round trip {:.1e}", worst);
  return o;
}

// ---- 3: visual odometry ----

Eigen::Isometry3d random_motion(Rng& rng, double angle, double shift) {
  const Eigen::Vector3d axis = Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal()).normalized();
  Eigen::Isometry3d t = Eigen::Isometry3d::Identity();
  t.linear() = Eigen::AngleAxisd(rng.uniform(-angle, angle), axis).toRotationMatrix();
  t.translation() = Eigen::Vector3d(rng.uniform(-shift, shift), rng.uniform(-shift, shift), rng.uniform(-shift, shift));
  return t;
}

double motion_error(const Eigen::Isometry3d& a, const Eigen::Isometry3d& b) {
  return (a.matrix() - b.matrix()).cwiseAbs().maxCoeff();
}

std::vector<perception::IdPoint> cloud(Rng& rng, int n) {
  std::vector<perception::IdPoint> pts;
  for (int i = 0; i < n; ++i) pts.push_back({i, {rng.uniform(-5, 5), rng.uniform(-2, 2), rng.uniform(2, 15)}});
  return pts;
}

// Static points seen from a camera that moved by `m`.
std::vector<perception::IdPoint> observe(const std::vector<perception::IdPoint>& pts, const Eigen::Isometry3d& m) {
  std::vector<perception::IdPoint> out;
  for (const auto& p : pts) out.push_back({p.id, m.inverse() * p.p});
  return out;
}

Outcome visual_odometry() {
  Outcome o;
  Rng rng(103);
  double worst_clean = 0.0;
  for (int k = 0; k < 100; ++k) {
    const int n = 3 + static_cast<int>(rng.below(30));
    const auto prev = cloud(rng, n);
    const auto t = random_motion(rng, 0.5, 1.0);
    const auto e = perception::estimate_motion(prev, observe(prev, t), {}, rng);
    worst_clean = std::max(worst_clean, motion_error(e.motion, t));
  }
  o.require(worst_clean <= 1e-9, fmt::format("noiseless registration error {:.3g}", worst_clean));

  double worst_outlier = 0.0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    Rng r(1000 + seed);
    const auto prev = cloud(r, 40);
    const auto t = random_motion(r, 0.3, 1.0);
    auto curr = observe(prev, t);
    for (std::size_t i = 0; i < curr.size(); i += 5)
      curr[i].p += 5.0 * Eigen::Vector3d(r.normal(), r.normal(), r.normal()).normalized();
    const auto e = perception::estimate_motion(prev, curr, {}, r);
    worst_outlier = std::max(worst_outlier, motion_error(e.motion, t));
  }
  o.require(worst_outlier <= 1e-6, fmt::format("outlier trial error {:.3g}", worst_outlier));
  if (o.pass) o.detail = fmt::format("clean {:.1e}, 20% outliers {:.1e}", worst_clean, worst_outlier);
  return o;
}

// ---- 4: planners ----

// Dijkstra over doubles with the grid search's move rules.
double dijkstra_oracle(const mapping::Costmap& m, mapping::CellIndex s, mapping::CellIndex g) {
  const auto open = [&](int x, int y) {
    if (!m.in_bounds(x, y)) return false;
    if ((x == s.ix && y == s.iy) || (x == g.ix && y == g.iy)) return true;
    return m.cost(x, y) < mapping::kInscribedCost;
  };
  std::vector<double> dist(m.size(), std::numeric_limits<double>::infinity());
  using Item = std::pair<double, std::size_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
  dist[m.index(s.ix, s.iy)] = 0.0;
  pq.push({0.0, m.index(s.ix, s.iy)});
  while (!pq.empty()) {
    const auto [d, k] = pq.top();
    pq.pop();
    if (d > dist[k]) continue;
    const auto c = m.cell_at(k);
    for (int dx = -1; dx <= 1; ++dx)
      for (int dy = -1; dy <= 1; ++dy) {
        if (!dx && !dy) continue;
        const int x = c.ix + dx, y = c.iy + dy;
        if (!open(x, y) || (dx && dy && (!open(c.ix + dx, c.iy) || !open(c.ix, c.iy + dy)))) continue;
        const double nd = d + (dx && dy ? std::sqrt(2.0) : 1.0) * m.resolution() * (1.0 + m.cost(x, y) / 252.0);
        if (nd < dist[m.index(x, y)]) {
          dist[m.index(x, y)] = nd;
          pq.push({nd, m.index(x, y)});
        }
      }
  }
  return dist[m.index(g.ix, g.iy)];
}

// Dense walk along every segment of the path.
bool touches_lethal(const mapping::Costmap& m, const planning::Path& path) {
  const auto lethal_at = [&](const Eigen::Vector2d& p) {
    const auto c = m.cell_of(p);
    return !c || m.cost(c->ix, c->iy) == mapping::kLethalCost;
  };
  if (path.poses.size() == 1) return lethal_at(path.poses[0].xy());
  for (std::size_t k = 1; k < path.poses.size(); ++k) {
    const Eigen::Vector2d a = path.poses[k - 1].xy(), b = path.poses[k].xy();
    const int n = std::max(1, static_cast<int>(std::ceil((b - a).norm() / (m.resolution() / 16.0))));
    for (int i = 0; i <= n; ++i)
      if (lethal_at(a + (b - a) * (double(i) / n))) return true;
  }
  return false;
}

Outcome planners() {
  Outcome o;
  Rng rng(104);
  int reachable = 0, mismatches = 0, oracle_mismatch = 0, lethal_touches = 0;
  for (int trial = 0; trial < 200; ++trial) {
    mapping::Costmap m({0.0, 0.0}, 1.0, 20, 20);
    for (int x = 0; x < 20; ++x)
      for (int y = 0; y < 20; ++y) {
        if (rng.bernoulli(0.2)) m.set_cost(x, y, mapping::kLethalCost);
        else if (rng.bernoulli(0.3)) m.set_cost(x, y, static_cast<std::uint8_t>(rng.below(253)));
      }
    const mapping::CellIndex s{static_cast<int>(rng.below(20)), static_cast<int>(rng.below(20))};
    const mapping::CellIndex g{static_cast<int>(rng.below(20)), static_cast<int>(rng.below(20))};
    m.set_cost(s.ix, s.iy, 0);
    m.set_cost(g.ix, g.iy, 0);
    const auto a = planning::plan_astar(m, s, g);
    const auto d = planning::plan_astar(m, s, g, {planning::Heuristic::Zero, 1.0, 0});
    const double oracle = dijkstra_oracle(m, s, g);
    if (a.status != d.status) ++mismatches;
    if (!a.ok()) {
      if (std::isfinite(oracle)) ++oracle_mismatch;
      continue;
    }
    ++reachable;
    if (a.path.cost != d.path.cost) ++mismatches;
    if (std::abs(a.path.cost - oracle) > 1e-8 * std::max(1.0, oracle)) ++oracle_mismatch;
    if (touches_lethal(m, a.path) || touches_lethal(m, d.path)) ++lethal_touches;
  }
  o.require(mismatches == 0, fmt::format("{} A*/Dijkstra cost mismatches", mismatches));
  o.require(oracle_mismatch == 0, fmt::format("{} oracle mismatches", oracle_mismatch));
  o.require(reachable >= 100, fmt::format("only {} reachable maps", reachable));

  // Sampling planner on inflated maps.
  int rrt_ok = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const mapping::GridGeometry geo({0.0, 0.0}, 0.25, 80, 80);
    std::vector<mapping::CellIndex> rocks;
    for (int k = 0; k < 25; ++k) rocks.push_back({static_cast<int>(rng.below(80)), static_cast<int>(rng.below(80))});
    const auto m = mapping::inflate_cells(geo, rocks, {0.5, 0.3, false});
    Eigen::Vector2d s, g;
    do s = {rng.uniform(0.5, 19.5), rng.uniform(0.5, 19.5)};
    while (!m.passable(s));
    do g = {rng.uniform(0.5, 19.5), rng.uniform(0.5, 19.5)};
    while (!m.passable(g));
    planning::RrtConfig cfg;
    cfg.n_max = 1500;
    Rng r(trial);
    const auto res = planning::plan_rrt_star(m, s, g, cfg, r);
    if (!res.plan.ok()) continue;
    ++rrt_ok;
    if (touches_lethal(m, res.plan.path)) ++lethal_touches;
    const auto a = planning::plan_astar(m, s, g);
    if (a.ok() && touches_lethal(m, a.path)) ++lethal_touches;
  }
  o.require(lethal_touches == 0, fmt::format("{} paths touch lethal cells", lethal_touches));
  o.require(rrt_ok >= 15, fmt::format("RRT* solved only {}/20", rrt_ok));
  if (o.pass) o.detail = fmt::format("{} reachable maps equal, RRT* {}/20 clean", reachable, rrt_ok);
  return o;
}

// ---- 5: local planner ----

Outcome dwa_safety() {
  Outcome o;
  Rng rng(105);
  const double radius = 0.5;
  int scenes = 0, attempts = 0, unsafe = 0, fast = 0, refused = 0;
  while (scenes < 100 && attempts < 1000) {
    ++attempts;
    const mapping::GridGeometry geo({0.0, 0.0}, 0.25, 60, 60);
    std::vector<mapping::CellIndex> rocks;
    const int count = 10 + static_cast<int>(rng.below(30));
    for (int k = 0; k < count; ++k) rocks.push_back({static_cast<int>(rng.below(60)), static_cast<int>(rng.below(60))});
    // A wall across part of the scene now and then.
    if (rng.bernoulli(0.3)) {
      const int col = 20 + static_cast<int>(rng.below(20));
      for (int iy = 0; iy < 45; ++iy) rocks.push_back({col, iy});
    }
    const auto m = mapping::inflate_cells(geo, rocks, {radius, 0.3, false});
    planning::RobotState st;
    st.pose = {rng.uniform(1, 14), rng.uniform(1, 14), rng.uniform(-kPi, kPi)};
    if (!m.passable(st.pose.xy())) continue;
    st.v = rng.uniform(0.0, 1.5);
    st.omega = rng.uniform(-1.0, 1.0);
    planning::Path path;
    const Eigen::Vector2d goal(rng.uniform(0, 15), rng.uniform(0, 15));
    for (int k = 0; k <= 10; ++k) {
      const Eigen::Vector2d q = st.pose.xy() + (goal - st.pose.xy()) * (k / 10.0);
      path.poses.push_back({q.x(), q.y(), 0.0});
    }
    planning::DwaConfig cfg;
    cfg.omni = rng.bernoulli(0.25);
    const auto samples = planning::dwa_evaluate(m, st, path, cfg);
    if (std::none_of(samples.begin(), samples.end(), [](const auto& s) { return s.admissible; })) continue;
    ++scenes;
    const auto r = planning::dwa_step(m, st, path, cfg);
    if (!r.admissible) {
      ++refused;
      continue;
    }
    if (std::hypot(r.cmd.v, r.cmd.vy) > 1.5 + 1e-12) ++fast;
    // Clearance from every rock cell, checked directly.
    bool safe = true;
    for (const auto& pose : r.trajectory) {
      const auto c = m.cell_of(pose.xy());
      if (!c) {
        safe = false;
        break;
      }
      const Eigen::Vector2d centre = m.cell_center(c->ix, c->iy);
      for (const auto& rock : rocks)
        if ((m.cell_center(rock.ix, rock.iy) - centre).norm() <= radius + 1e-9) safe = false;
    }
    if (!safe) ++unsafe;
  }
  o.require(scenes == 100, fmt::format("only {} usable scenes", scenes));
  o.require(refused == 0, fmt::format("{} scenes returned no command", refused));
  o.require(unsafe == 0, fmt::format("{} chosen trajectories collide", unsafe));
  o.require(fast == 0, fmt::format("{} commands exceed 1.5 m/s", fast));
  if (o.pass) o.detail = fmt::format("{} scenes collision free", scenes);
  return o;
}

// ---- 6: coverage ----

Outcome coverage() {
  Outcome o;
  const mapping::Costmap clear({-2.0, -2.0}, 0.25, 56, 56);
  planning::Region reg;
  reg.extent = {10.0, 10.0};
  const auto r = planning::plan_coverage(reg, 2.0, clear);
  o.require(r.status == planning::PlanStatus::Ok, "empty-region plan failed");
  o.require(r.rows == 5, fmt::format("{} rows", r.rows));
  o.require(std::abs(r.row_length_total - 50.0) < 1e-9, fmt::format("row length {}", r.row_length_total));
  const double free_frac = planning::coverage_fraction(r.path, 1.0, clear, reg, r.path.poses.front().xy());
  o.require(free_frac == 1.0, fmt::format("obstacle-free fraction {}", free_frac));

  Rng rng(106);
  double worst = 1.0;
  for (int trial = 0; trial < 20; ++trial) {
    mapping::Costmap m({-2.0, -2.0}, 0.25, 56, 56);
    for (int ix = 8; ix < 48; ++ix)
      for (int iy = 8; iy < 48; ++iy)
        if (rng.bernoulli(0.1)) m.set_cost(ix, iy, mapping::kLethalCost);
    const auto c = planning::plan_coverage(reg, 2.0, m);
    if (c.status != planning::PlanStatus::Ok) {
      worst = 0.0;
      continue;
    }
    if (touches_lethal(m, c.path)) o.require(false, "coverage path touches a lethal cell");
    worst = std::min(worst, planning::coverage_fraction(c.path, 1.0, m, reg, c.path.poses.front().xy()));
  }
  o.require(worst >= 0.99, fmt::format("rocky coverage fraction {:.4f}", worst));
  if (o.pass) o.detail = fmt::format("5 rows / 50 m, clear 1.0, rocky min {:.4f}", worst);
  return o;
}

// ---- 7: state estimation ----

Outcome ekf() {
  using namespace localization;
  Outcome o;
  FilterConfig cfg;

  {  // noiseless fusion
    Rng rng(107);
    Vector5d truth;
    truth << 1.0, -2.0, 0.4, 0.0, 0.0;
    Belief b = cfg.initial_belief({truth(0), truth(1), truth(2)});
    Pose2 anchor_true = b.pose(), anchor_est = b.pose();
    const double dt = 0.1;
    for (int k = 1; k <= 100; ++k) {
      if (k % 10 == 1) {
        truth(kV) = rng.uniform(-0.5, 0.8);
        truth(kOmega) = rng.uniform(-0.4, 0.4);
      }
      b = ekf_update(b, Measurement::wheel_twist(truth(kV), truth(kOmega), Eigen::Matrix2d::Identity() * 1e-14)).belief;
      b = ekf_update(b, Measurement::imu_yaw_rate(truth(kOmega), 1e-14)).belief;
      b = ekf_predict(b, dt, cfg.process_covariance(dt));
      truth = motion_model(truth, dt);
      if (k % 5 == 0) {
        const Pose2 now{truth(0), truth(1), truth(2)};
        b = ekf_update(b, vo_delta_to_pose_measurement(anchor_est, between(anchor_true, now),
                                                       Eigen::Matrix3d::Identity() * 1e-14))
                .belief;
        anchor_true = now;
        anchor_est = b.pose();
      }
    }
    const double err = std::hypot(b.mean(kX) - truth(kX), b.mean(kY) - truth(kY));
    const double err_th = std::abs(wrap_angle(b.mean(kTheta) - truth(kTheta)));
    o.require(err <= 1e-6 && err_th <= 1e-6, fmt::format("noiseless error {:.3g} m / {:.3g} rad", err, err_th));
  }

  // Monte-Carlo consistency: truth drawn from the filter's own process model.
  const int runs = 50;
  const double dt = 0.05;
  const int steps = static_cast<int>(std::lround(60.0 / dt));
  FilterConfig mc = cfg;
  mc.process_noise << 1e-4, 1e-4, 1e-5, 0.01, 0.01;
  const Matrix5d q = mc.process_covariance(dt);
  const Vector5d q_sd = q.diagonal().cwiseSqrt();
  std::vector<double> nees(static_cast<std::size_t>(steps), 0.0);
  for (int run = 0; run < runs; ++run) {
    Rng rng(107000 + static_cast<std::uint64_t>(run));
    Belief b = mc.initial_belief({0.0, 0.0, 0.0});
    b.mean(kV) = 0.5;
    b.mean(kOmega) = 0.1;
    Vector5d truth = b.mean;
    for (int i = 0; i < 5; ++i) truth(i) += mc.initial_sigma(i) * rng.normal();
    for (int k = 0; k < steps; ++k) {
      truth = motion_model(truth, dt);
      for (int i = 0; i < 5; ++i) truth(i) += q_sd(i) * rng.normal();
      truth(kTheta) = wrap_angle(truth(kTheta));
      b = ekf_predict(b, dt, q);
      const double v_meas = truth(kV) + std::sqrt(mc.odometry_noise(0, 0)) * rng.normal();
      const double w_meas = truth(kOmega) + std::sqrt(mc.odometry_noise(1, 1)) * rng.normal();
      b = ekf_update(b, Measurement::wheel_twist(v_meas, w_meas, mc.odometry_noise), 1.0).belief;
      b = ekf_update(b, Measurement::imu_yaw_rate(truth(kOmega) + std::sqrt(mc.imu_noise) * rng.normal(), mc.imu_noise), 1.0)
              .belief;
      if (k % 20 == 19) {
        const Pose2 z{truth(kX) + std::sqrt(mc.vo_noise(0, 0)) * rng.normal(),
                      truth(kY) + std::sqrt(mc.vo_noise(1, 1)) * rng.normal(),
                      wrap_angle(truth(kTheta) + std::sqrt(mc.vo_noise(2, 2)) * rng.normal())};
        b = ekf_update(b, Measurement::pose(z, mc.vo_noise), 1.0).belief;
      }
      Vector5d e = truth - b.mean;
      e(kTheta) = wrap_angle(e(kTheta));
      nees[static_cast<std::size_t>(k)] += e.dot(b.cov.ldlt().solve(e)) / runs;
    }
  }
  const boost::math::chi_squared chi(5.0 * runs);
  const double lo = boost::math::quantile(chi, 0.025) / runs, hi = boost::math::quantile(chi, 0.975) / runs;
  double mean = 0.0;
  int inside = 0;
  for (double v : nees) {
    mean += v / steps;
    inside += v >= lo && v <= hi;
  }
  const double frac = static_cast<double>(inside) / steps;
  o.require(mean >= lo && mean <= hi, fmt::format("mean NEES {:.3f} outside [{:.3f}, {:.3f}]", mean, lo, hi));
  o.require(frac >= 0.9, fmt::format("only {:.1f}% of steps inside the NEES band", 100 * frac));

  {  // long run stays SPD
    Rng rng(108);
    Belief b = cfg.initial_belief({0.0, 0.0, 3.1});
    bool spd = true;
    for (int k = 0; k < 10000 && spd; ++k) {
      switch (rng.below(4)) {
        case 0:
          b = ekf_update(b, Measurement::wheel_twist(rng.uniform(-1, 1), rng.uniform(-1, 1), cfg.odometry_noise)).belief;
          break;
        case 1:
          b = ekf_update(b, Measurement::imu_yaw_rate(rng.uniform(-1, 1), cfg.imu_noise)).belief;
          break;
        case 2: {
          const Pose2 p{b.mean(kX) + rng.normal(0, 0.05), b.mean(kY) + rng.normal(0, 0.05),
                        wrap_angle(b.mean(kTheta) + rng.normal(0, 0.05))};
          b = ekf_update(b, Measurement::pose(p, cfg.vo_noise)).belief;
          break;
        }
        default:
          b = ekf_predict(b, 0.05, cfg.process_covariance(0.05));
      }
      spd = is_spd(b.cov);
    }
    o.require(spd, "covariance lost positive definiteness");
  }
  if (o.pass)
    o.detail = fmt::format("NEES mean {:.3f} in [{:.3f}, {:.3f}], {:.1f}% of steps in band", mean, lo, hi, 100 * frac);
  return o;
}

// ---- 8: dig arithmetic ----

Outcome dig_cycles() {
  Outcome o;
  o.require(arm::scoop_cycle_count(10.0, 5.0) == 2, "cycle count for 10 kg / 5 kg is not 2");

  // Arm level: plan, track, and book every event.
  const arm::ArmParams p;
  arm::MassLedger ledger;
  ledger.deposit_remaining = 10.0;
  ledger.scoop.capacity = 5.0;
  arm::ScoopPlanConfig pc;
  pc.ground_z = -0.5;
  const auto trajs = arm::plan_scoop_cycle({2.5, 0.0, -0.8}, {0.0, 2.5, 0.1}, ledger.scoop, 10.0, p, pc);
  o.require(trajs.size() == 2, fmt::format("{} planned cycles", trajs.size()));
  arm::ArmJointState s;
  s.q = p.stow;
  int digs = 0, dumps = 0;
  for (const auto& tr : trajs) {
    for (double t = tr.start_time(); t < tr.end_time() + 1.0; t += 0.05) {
      const auto r = arm::step_arm(s, tr, t, {}, 0.05);
      s = r.state;
      for (const auto& e : r.events) {
        const double before = ledger.total();
        arm::apply_event(e, ledger);
        o.require(std::abs(ledger.total() - before) <= 1e-12, "ledger total changed at an event");
        digs += e.kind == arm::ArmEventKind::Dig;
        dumps += e.kind == arm::ArmEventKind::Dump;
      }
    }
  }
  o.require(digs == 2 && dumps == 2, fmt::format("{} digs / {} dumps", digs, dumps));
  o.require(ledger.bin_mass == 10.0, fmt::format("arm-level bin mass {}", ledger.bin_mass));

  // Mission level, through the bundled fixture.
  auto cfg = cli::load_config(kFixtures + "/task2.yaml");
  cfg.output_dir = scratch("dig").string();
  const auto sum = cli::run(cfg);
  double bin = 0.0;
  for (const auto& c : sum.report.collected) bin += c.mass;
  o.require(sum.report.cycles == 2, fmt::format("mission cycles {}", sum.report.cycles));
  o.require(bin == 10.0, fmt::format("mission bin mass {}", bin));
  std::ifstream tel(fs::path(cfg.output_dir) / "telemetry.jsonl");
  int events = 0;
  for (std::string line; std::getline(tel, line);) {
    const auto j = nlohmann::json::parse(line);
    const auto& m = j.at("mass");
    const double total = m.at("deposit").get<double>() + m.at("scoop").get<double>() + m.at("bin").get<double>();
    o.require(std::abs(total - 10.0) <= 1e-9, fmt::format("mass total {} at t={}", total, j.at("t").get<double>()));
    events += static_cast<int>(j.at("events").size());
  }
  std::ifstream again(fs::path(cfg.output_dir) / "telemetry.jsonl");
  o.require(cli::replay_check(again).ok, "telemetry replay check failed");
  if (o.pass) o.detail = fmt::format("2 cycles, bin {:.1f} kg, conserved over {} event records", bin, events);
  return o;
}

// ---- 9 and 10: missions ----

struct FixtureRun {
  cli::RunConfig config;
  cli::RunSummary summary;
  fs::path dir;
  double wall = 0.0;
};

FixtureRun run_fixture(const std::string& name, const std::string& tag) {
  FixtureRun r;
  r.config = cli::load_config(kFixtures + "/" + name + ".yaml");
  r.dir = scratch(name + "_" + tag);
  r.config.output_dir = r.dir.string();
  const auto t0 = std::chrono::steady_clock::now();
  r.summary = cli::run(r.config);
  r.wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

Outcome missions() {
  Outcome o;
  std::vector<std::string> notes;
  for (const std::string name : {"task1", "task2", "task3", "task3_low_noise"}) {
    const auto a = run_fixture(name, "a");
    const auto b = run_fixture(name, "b");
    const auto& rep = a.summary.report;
    const auto& sc = a.summary.score;
    o.require(a.wall + b.wall < 120.0, fmt::format("{} took {:.1f} s", name, a.wall + b.wall));
    o.require(rep.outcome == "succeeded", fmt::format("{} ended '{}'", name, rep.outcome));
    o.require(rep.elapsed <= 600.0, fmt::format("{} used {:.1f} s", name, rep.elapsed));
    o.require(slurp(a.dir / "report.json") == slurp(b.dir / "report.json"), name + " reports differ");
    if (name == "task1") {
      o.require(sc.recall >= 2.0 / 3.0 - 1e-12, fmt::format("task1 recall {:.3f}", sc.recall));
      o.require(sc.mean_error <= 2.0, fmt::format("task1 mean error {:.3f}", sc.mean_error));
      notes.push_back(fmt::format("T1 recall {:.2f} err {:.2f} m", sc.recall, sc.mean_error));
    }
    if (name == "task3" || name == "task3_low_noise") {
      const double home = (rep.final_position - a.config.world.home_base_pose.xy()).norm();
      o.require(home <= 3.0, fmt::format("{} ended {:.2f} m from home", name, home));
      if (name == "task3_low_noise") {
        o.require(sc.object_error && *sc.object_error <= 0.5, fmt::format("object error {}", sc.object_error.value_or(-1)));
        notes.push_back(fmt::format("T3 object {:.3f} m home {:.2f} m", sc.object_error.value_or(-1), home));
      }
    }
    if (name == "task2") notes.push_back(fmt::format("T2 {:.0f}%", 100 * sc.collected_fraction));
  }
  if (o.pass) {
    o.detail = notes[0];
    for (std::size_t i = 1; i < notes.size(); ++i) o.detail += ", " + notes[i];
  }
  return o;
}

Outcome determinism() {
  Outcome o;
  std::map<std::string, std::string> golden;
  std::ifstream in(kFixtures + "/golden_digests.txt");
  for (std::string line; std::getline(in, line);) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::string name, digest;
    ss >> name >> digest;
    golden[name] = digest;
  }
  o.require(!golden.empty(), "no golden digests");
  for (const auto& [name, digest] : golden) {
    const auto a = run_fixture(name, "d1");
    const auto b = run_fixture(name, "d2");
    o.require(a.summary.telemetry_digest == b.summary.telemetry_digest, name + " digests differ between runs");
    o.require(slurp(a.dir / "telemetry.jsonl") == slurp(b.dir / "telemetry.jsonl"), name + " telemetry differs");
    o.require(a.summary.telemetry_digest == digest,
              fmt::format("{} digest {} != recorded {}", name, a.summary.telemetry_digest, digest));
  }
  if (o.pass) o.detail = fmt::format("{} fixtures match recorded digests", golden.size());
  return o;
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    double limit;  // wall-clock seconds
    std::function<Outcome()> check;
  };
  const std::vector<Criterion> criteria = {
      {1, "kinematics", 5.0, kinematics},
      {2, "stereo", 1.0, stereo},
      {3, "visual odometry", 5.0, visual_odometry},
      {4, "planner equivalence", 30.0, planners},
      {5, "DWA safety", 30.0, dwa_safety},
      {6, "coverage", 60.0, coverage},
      {7, "EKF", 60.0, ekf},
      {8, "dig cycles", 10.0, dig_cycles},
      {9, "seeded missions", 480.0, missions},  // four tasks, 120 s each
      {10, "determinism", 120.0, determinism},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      o = c.check();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs >= c.limit) o.require(false, fmt::format("took {:.2f} s, limit {:.0f} s", secs, c.limit));
    failures += !o.pass;
    std::cout << fmt::format("criterion {:2d} {:<20} {}  {:.2f}s  {}", c.id, c.name, o.pass ? "PASS" : "FAIL", secs,
                             o.detail)
              << std::endl;
  }
  std::cout << (failures ? fmt::format("{} criteria failed", failures) : std::string("all criteria passed"))
            << std::endl;
  return failures ? 1 : 0;
}
