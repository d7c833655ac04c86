#include <algorithm>
#include <cmath>
#include <tuple>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "sim.hpp"

namespace lunar::mission {

std::string to_string(TaskId t) {
  switch (t) {
    case TaskId::ResourceLocalization: return "resource_localization";
    case TaskId::ResourceCollection: return "resource_collection";
    case TaskId::SelfLocalization: return "self_localization";
  }
  return "unknown";
}

std::optional<TaskId> task_from_string(const std::string& s) {
  for (TaskId t : {TaskId::ResourceLocalization, TaskId::ResourceCollection, TaskId::SelfLocalization})
    if (to_string(t) == s) return t;
  return std::nullopt;
}

planning::DwaConfig StackConfig::default_dwa() {
  planning::DwaConfig d;
  d.v_max = 1.0;  // leaves wheel-speed headroom for turning
  // A stopped rover near rocks otherwise prefers standing still.
  d.clearance_cap = 1.0;
  d.w_clearance = 0.2;
  d.w_velocity = 0.2;
  return d;
}

void StackConfig::validate() const {
  geometry.validate();
  filter.validate();
  sensor_model.validate();
  dwa.validate();
  arm.validate();
  noise.stereo.validate();
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(std::string(name) + " must be > 0");
  };
  positive(map_resolution, "map_resolution");
  positive(tick, "tick");
  for (auto [v, name] : {std::pair{control_period, "control_period"}, {lidar_period, "lidar_period"},
                         {vo_period, "vo_period"}, {map_period, "map_period"},
                         {detector_period, "detector_period"}, {replan_period, "replan_period"}}) {
    positive(v, name);
    if (v < tick - 1e-12) throw ConfigError(std::string(name) + " must be at least one tick");
  }
  positive(goal_tolerance, "goal_tolerance");
  positive(volatile_sensor_radius, "volatile_sensor_radius");
  positive(recovery_omega, "recovery_omega");
  if (inflation.robot_radius < 0.0 || !(inflation.decay > 0.0))
    throw ConfigError("inflation radius must be >= 0 and decay > 0");
  if (scoop_capacity && !(*scoop_capacity > 0.0)) throw ConfigError("scoop_capacity must be > 0");
  if (telemetry_every < 1) throw ConfigError("telemetry_every must be >= 1");
  if (bin_height < 0.0) throw ConfigError("bin_height must be >= 0");
}

std::vector<Eigen::Vector2d> trilaterate(const std::vector<Eigen::Vector2d>& positions,
                                         const std::vector<double>& ranges) {
  if (positions.empty() || positions.size() != ranges.size())
    throw PreconditionError("trilateration needs matching, non-empty positions and ranges");
  const std::size_t n = positions.size();
  if (n == 1) return {positions.front()};

  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  for (const auto& p : positions) mean += p;
  mean /= static_cast<double>(n);
  Eigen::Matrix2d scatter = Eigen::Matrix2d::Zero();
  for (const auto& p : positions) scatter += (p - mean) * (p - mean).transpose();
  scatter /= static_cast<double>(n);
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(scatter);
  const Eigen::Vector2d along = eig.eigenvectors().col(1);
  const Eigen::Vector2d normal = eig.eigenvectors().col(0);

  // Gauss-Newton on range residuals from a starting point.
  auto refine = [&](Eigen::Vector2d x) {
    for (int it = 0; it < 20; ++it) {
      Eigen::Matrix2d jtj = Eigen::Matrix2d::Zero();
      Eigen::Vector2d jtr = Eigen::Vector2d::Zero();
      for (std::size_t k = 0; k < n; ++k) {
        const Eigen::Vector2d d = x - positions[k];
        const double r = d.norm();
        if (r < 1e-9) continue;
        const Eigen::Vector2d j = d / r;
        jtj += j * j.transpose();
        jtr += j * (r - ranges[k]);
      }
      if (std::abs(jtj.determinant()) < 1e-12) break;
      const Eigen::Vector2d step = jtj.ldlt().solve(jtr);
      x -= step;
      if (step.norm() < 1e-10) break;
    }
    return x;
  };

  constexpr double kCollinearSpread = 0.05 * 0.05;  // m^2 of spread across the line
  if (eig.eigenvalues()(0) < kCollinearSpread) {
    // Along-line coordinate from the range differences; the offset is
    // mirror-ambiguous.
    double s_num = 0.0, s_den = 0.0;
    for (std::size_t k = 1; k < n; ++k) {
      const double a0 = (positions[0] - mean).dot(along), ak = (positions[k] - mean).dot(along);
      if (std::abs(ak - a0) < 1e-9) continue;
      // r_k^2 - r_0^2 = a_k^2 - a_0^2 - 2 s (a_k - a_0)
      const double rhs = (ak * ak - a0 * a0) - (ranges[k] * ranges[k] - ranges[0] * ranges[0]);
      s_num += 2.0 * (ak - a0) * rhs;
      s_den += 4.0 * (ak - a0) * (ak - a0);
    }
    const double s = s_den > 0.0 ? s_num / s_den : (positions[0] - mean).dot(along);
    double h2 = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double a = (positions[k] - mean).dot(along) - s;
      h2 += ranges[k] * ranges[k] - a * a;
    }
    const double h = std::sqrt(std::max(0.0, h2 / static_cast<double>(n)));
    const Eigen::Vector2d foot = mean + s * along;
    if (h < 0.1) return {foot};
    return {foot + h * normal, foot - h * normal};
  }

  // Linearized least squares for the start, then refinement.
  Eigen::MatrixXd a(n - 1, 2);
  Eigen::VectorXd b(n - 1);
  for (std::size_t k = 1; k < n; ++k) {
    a.row(static_cast<Eigen::Index>(k - 1)) = 2.0 * (positions[k] - positions[0]).transpose();
    b(static_cast<Eigen::Index>(k - 1)) = positions[k].squaredNorm() - positions[0].squaredNorm() -
                                          ranges[k] * ranges[k] + ranges[0] * ranges[0];
  }
  const Eigen::Vector2d x0 = a.jacobiSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(b);
  return {refine(x0)};
}

Score score(const MissionReport& report, const world::World& truth, const Tolerances& tol) {
  Score s;
  s.task = report.task;
  switch (report.task) {
    case TaskId::ResourceLocalization: {
      std::vector<std::tuple<double, std::size_t, std::size_t>> pairs;
      for (std::size_t i = 0; i < report.claims.size(); ++i)
        for (std::size_t j = 0; j < truth.deposits.size(); ++j) {
          const double d = (report.claims[i].position - truth.deposits[j].position.head<2>()).norm();
          if (d <= tol.deposit_match) pairs.emplace_back(d, i, j);
        }
      std::sort(pairs.begin(), pairs.end());
      std::vector<char> claim_used(report.claims.size(), 0), truth_used(truth.deposits.size(), 0);
      double err = 0.0;
      int correct = 0;
      for (const auto& [d, i, j] : pairs) {
        if (claim_used[i] || truth_used[j]) continue;
        claim_used[i] = truth_used[j] = 1;
        ++s.matched;
        err += d;
        if (report.claims[i].type_label == truth.deposits[j].type_label) ++correct;
      }
      const bool vacuous = truth.deposits.empty();
      s.recall = vacuous ? 1.0 : static_cast<double>(s.matched) / static_cast<double>(truth.deposits.size());
      s.mean_error = s.matched ? err / s.matched : 0.0;
      s.type_accuracy = s.matched ? static_cast<double>(correct) / s.matched : (vacuous ? 1.0 : 0.0);
      const double accuracy =
          s.matched ? 1.0 - std::min(s.mean_error / tol.deposit_match, 1.0) : (vacuous ? 1.0 : 0.0);
      s.composite = (s.recall + s.type_accuracy + accuracy) / 3.0;
      break;
    }
    case TaskId::ResourceCollection: {
      double bin = 0.0;
      for (const auto& c : report.collected) bin += c.mass;
      s.collected_fraction = report.required_mass > 0.0 ? std::clamp(bin / report.required_mass, 0.0, 1.0) : 1.0;
      s.composite = s.collected_fraction;
      break;
    }
    case TaskId::SelfLocalization: {
      if (report.object_claim) s.object_error = (*report.object_claim - truth.cubesat_position).norm();
      s.home_success = (report.final_position - truth.home_base_pose.xy()).norm() <= tol.home;
      const double object_term =
          s.object_error ? 1.0 - std::min(*s.object_error / tol.deposit_match, 1.0) : 0.0;
      s.composite = 0.5 * (object_term + (s.home_success ? 1.0 : 0.0));
      break;
    }
  }
  return s;
}

MissionResult run_task(const TaskConfig& task, const world::World& world, const StackConfig& stack,
                       std::uint64_t mission_seed) {
  stack.validate();
  if (!(task.budget > 0.0)) throw ConfigError("task budget must be > 0");
  if (!(task.bin_offset > 0.0) || task.bin_offset >= 5.0)
    throw ConfigError("bin_offset must lie in (0, 5) m to stay within arm reach");
  if (task.required_mass && !(*task.required_mass > 0.0)) throw ConfigError("required_mass must be > 0");

  detail::MissionSim sim(world, stack, task, mission_seed);
  auto machine = detail::build_task_machine(sim);
  sim.active_state = [m = machine.get()] {
    const std::string* a = m->active();
    return a ? *a : std::string();
  };

  ExecuteOptions opts;
  opts.tick_budget = static_cast<long>(std::ceil(task.budget / stack.tick - 1e-9));
  opts.after_tick = [&sim](Context&) { sim.advance(); };
  MissionResult out;
  out.trace = sm_execute(*machine, sim, opts);
  out.machine_name = machine->name();

  detail::finalize_partial_claims(sim);
  MissionReport& r = sim.report;
  r.outcome = out.trace.final_outcome;
  r.elapsed = std::min(sim.now, task.budget);
  r.final_position = sim.truth.pose.xy();
  if (task.task == TaskId::ResourceCollection && sim.target_deposit >= 0)
    r.collected.push_back({sim.world.deposits[static_cast<std::size_t>(sim.target_deposit)].id, sim.ledger.bin_mass});
  if (task.task == TaskId::SelfLocalization)
    r.returned_home = (sim.truth.pose.xy() - sim.world.home_base_pose.xy()).norm() <= task.home_tolerance;

  out.report = r;
  out.telemetry = std::move(sim.telemetry);
  Fnv1a h;
  for (const auto& line : out.telemetry) {
    h.update(line);
    h.update("\n");
  }
  out.telemetry_digest = h.hex();
  out.grid = sim.grid;
  out.paths = std::move(sim.paths);
  return out;
}

}  // namespace lunar::mission
