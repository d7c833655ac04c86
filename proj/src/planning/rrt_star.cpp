#include <algorithm>
#include <cmath>
#include <limits>

#include "lunar/planning.hpp"

namespace lunar::planning {

RrtResult plan_rrt_star(const Costmap& map, const Eigen::Vector2d& start,
                        const Eigen::Vector2d& goal, const RrtConfig& cfg, Rng& rng) {
  if (cfg.n_max < 0 || !(cfg.step > 0.0) || cfg.goal_bias < 0.0 || cfg.goal_bias > 1.0)
    throw DomainError("invalid RRT* configuration");
  for (const auto* p : {&start, &goal}) {
    const auto c = map.cell_of(*p);
    if (!c) throw InvalidEndpoint("RRT* endpoint outside the map");
    if (map.cost(c->ix, c->iy) == mapping::kLethalCost) throw InvalidEndpoint("RRT* endpoint is lethal");
  }
  const std::vector<CellIndex> endpoints{*map.cell_of(start), *map.cell_of(goal)};
  const double check = cfg.check_step > 0.0 ? cfg.check_step : 0.5 * map.resolution();
  const Eigen::Vector2d lo = map.origin();
  const Eigen::Vector2d span(map.nx() * map.resolution(), map.ny() * map.resolution());
  // Lower bound from the asymptotic optimality condition in two dimensions.
  const double gamma =
      cfg.gamma > 0.0 ? cfg.gamma : 1.1 * 2.0 * std::sqrt(1.5) * std::sqrt(span.prod() / kPi);

  auto free_edge = [&](const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
    return segment_free(map, a, b, check, endpoints);
  };

  RrtResult out;
  auto& tree = out.tree;
  std::vector<std::vector<int>> children(1);
  tree.push_back({start, -1, 0.0});
  int goal_node = -1;
  const double inf = std::numeric_limits<double>::infinity();

  auto reparent = [&](int j, int new_parent, double new_cost) {
    auto& sib = children[static_cast<std::size_t>(tree[j].parent)];
    sib.erase(std::find(sib.begin(), sib.end(), j));
    tree[j].parent = new_parent;
    children[static_cast<std::size_t>(new_parent)].push_back(j);
    const double delta = new_cost - tree[j].cost;
    std::vector<int> stack{j};
    while (!stack.empty()) {
      const int k = stack.back();
      stack.pop_back();
      tree[k].cost += delta;
      for (int c : children[static_cast<std::size_t>(k)]) stack.push_back(c);
    }
  };

  if ((goal - start).norm() == 0.0) goal_node = 0;

  for (int it = 0; it < cfg.n_max; ++it) {
    // Fixed number of draws per iteration keeps the stream aligned across n_max.
    const double u_bias = rng.uniform();
    const double ux = rng.uniform(), uy = rng.uniform();
    const Eigen::Vector2d sample =
        u_bias < cfg.goal_bias ? goal : Eigen::Vector2d(lo.x() + ux * span.x(), lo.y() + uy * span.y());

    int nearest = 0;
    double best_d = inf;
    for (std::size_t k = 0; k < tree.size(); ++k) {
      const double d = (tree[k].p - sample).squaredNorm();
      if (d < best_d) {
        best_d = d;
        nearest = static_cast<int>(k);
      }
    }
    const Eigen::Vector2d from = tree[static_cast<std::size_t>(nearest)].p;
    Eigen::Vector2d to = sample;
    const double dist = (sample - from).norm();
    if (dist < 1e-12) {
      out.best_cost_history.push_back(goal_node >= 0 ? tree[static_cast<std::size_t>(goal_node)].cost : inf);
      continue;
    }
    if (dist > cfg.step) to = from + (sample - from) * (cfg.step / dist);
    const bool reaches_goal = (to - goal).norm() < 1e-12;
    if (reaches_goal && goal_node >= 0) to = goal;  // handled by rewiring below

    if (!free_edge(from, to)) {
      out.best_cost_history.push_back(goal_node >= 0 ? tree[static_cast<std::size_t>(goal_node)].cost : inf);
      continue;
    }

    const double n = static_cast<double>(tree.size() + 1);
    const double radius = std::min(gamma * std::sqrt(std::log(n) / n), cfg.step);
    std::vector<int> near;
    for (std::size_t k = 0; k < tree.size(); ++k) {
      if ((tree[k].p - to).norm() <= radius) near.push_back(static_cast<int>(k));
    }

    if (reaches_goal && goal_node >= 0) {
      // Sample landed on the existing goal node: try improving its parent.
      for (int j : near) {
        if (j == goal_node) continue;
        const double c = tree[static_cast<std::size_t>(j)].cost + (tree[static_cast<std::size_t>(j)].p - goal).norm();
        if (c < tree[static_cast<std::size_t>(goal_node)].cost - 1e-12 && free_edge(tree[static_cast<std::size_t>(j)].p, goal))
          reparent(goal_node, j, c);
      }
      out.best_cost_history.push_back(tree[static_cast<std::size_t>(goal_node)].cost);
      continue;
    }

    int parent = nearest;
    double cost = tree[static_cast<std::size_t>(nearest)].cost + (to - from).norm();
    for (int j : near) {
      const auto& nj = tree[static_cast<std::size_t>(j)];
      const double c = nj.cost + (to - nj.p).norm();
      if (c < cost - 1e-12 && free_edge(nj.p, to)) {
        cost = c;
        parent = j;
      }
    }
    const int id = static_cast<int>(tree.size());
    tree.push_back({to, parent, cost});
    children.emplace_back();
    children[static_cast<std::size_t>(parent)].push_back(id);
    if (reaches_goal) goal_node = id;

    for (int j : near) {
      if (j == parent || j == 0) continue;
      const double c = cost + (tree[static_cast<std::size_t>(j)].p - to).norm();
      if (c < tree[static_cast<std::size_t>(j)].cost - 1e-12 && free_edge(to, tree[static_cast<std::size_t>(j)].p))
        reparent(j, id, c);
    }

    // Connect the goal explicitly once it is within one step.
    if (goal_node < 0 && (goal - to).norm() <= cfg.step && free_edge(to, goal)) {
      goal_node = static_cast<int>(tree.size());
      tree.push_back({goal, id, cost + (goal - to).norm()});
      children.emplace_back();
      children[static_cast<std::size_t>(id)].push_back(goal_node);
    }
    out.best_cost_history.push_back(goal_node >= 0 ? tree[static_cast<std::size_t>(goal_node)].cost : inf);
  }

  if (goal_node < 0) {
    out.plan.status = PlanStatus::Unreachable;
    return out;
  }
  std::vector<int> chain;
  for (int k = goal_node; k >= 0; k = tree[static_cast<std::size_t>(k)].parent) chain.push_back(k);
  std::reverse(chain.begin(), chain.end());
  for (int k : chain) {
    const auto& p = tree[static_cast<std::size_t>(k)].p;
    out.plan.path.poses.push_back({p.x(), p.y(), 0.0});
  }
  assign_headings(out.plan.path);
  out.plan.path.cost = tree[static_cast<std::size_t>(goal_node)].cost;
  out.plan.status = PlanStatus::Ok;
  return out;
}

}  // namespace lunar::planning
