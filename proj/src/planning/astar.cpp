#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <queue>
#include <sstream>
#include <tuple>

#include <fmt/format.h>

#include "lunar/planning.hpp"

namespace lunar::planning {

double Path::length() const {
  double len = 0.0;
  for (std::size_t k = 1; k < poses.size(); ++k) len += (poses[k].xy() - poses[k - 1].xy()).norm();
  return len;
}

std::string to_string(PlanStatus s) {
  switch (s) {
    case PlanStatus::Ok: return "ok";
    case PlanStatus::Unreachable: return "unreachable";
    case PlanStatus::Empty: return "empty";
  }
  return "unknown";
}

void assign_headings(Path& path) {
  auto& p = path.poses;
  for (std::size_t k = 0; k + 1 < p.size(); ++k) {
    const Eigen::Vector2d d = p[k + 1].xy() - p[k].xy();
    if (d.norm() > 1e-12) {
      p[k].theta = std::atan2(d.y(), d.x());
    } else if (k > 0) {
      p[k].theta = p[k - 1].theta;
    }
  }
  if (p.size() >= 2) p.back().theta = p[p.size() - 2].theta;
}

namespace {

// Step costs are accumulated in integer nano-units so that every search
// order sums a path to the same value.
using Fixed = std::int64_t;
constexpr double kFixedScale = 1e9;

void check_endpoint(const Costmap& map, const CellIndex& c, const char* which) {
  if (!map.in_bounds(c.ix, c.iy))
    throw InvalidEndpoint(fmt::format("{} cell ({}, {}) is outside the map", which, c.ix, c.iy));
  if (map.cost(c.ix, c.iy) == mapping::kLethalCost)
    throw InvalidEndpoint(fmt::format("{} cell ({}, {}) is lethal", which, c.ix, c.iy));
}

}  // namespace

PlanResult plan_astar(const Costmap& map, const CellIndex& start, const CellIndex& goal,
                      const AstarConfig& cfg) {
  check_endpoint(map, start, "start");
  check_endpoint(map, goal, "goal");

  const double res = map.resolution();
  const std::size_t n = map.size();
  const std::size_t s_idx = map.index(start.ix, start.iy);
  const std::size_t g_idx = map.index(goal.ix, goal.iy);

  auto open_cell = [&](int ix, int iy) {
    if (!map.in_bounds(ix, iy)) return false;
    const std::size_t k = map.index(ix, iy);
    return k == s_idx || k == g_idx || map.cost(ix, iy) < mapping::kInscribedCost;
  };
  auto heuristic = [&](int ix, int iy) -> Fixed {
    if (cfg.heuristic == Heuristic::Zero) return 0;
    const double e = std::hypot(ix - goal.ix, iy - goal.iy) * res;
    // Slightly shrunk so rounding can never make it inadmissible.
    return static_cast<Fixed>(std::floor(e * kFixedScale * (1.0 - 1e-6)));
  };

  constexpr Fixed kInf = std::numeric_limits<Fixed>::max();
  std::vector<Fixed> g(n, kInf);
  std::vector<std::int64_t> parent(n, -1);
  using Entry = std::tuple<Fixed, std::size_t, Fixed>;  // f, cell index, g at push
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> open;

  g[s_idx] = 0;
  open.emplace(heuristic(start.ix, start.iy), s_idx, 0);

  PlanResult out;
  static constexpr int kDx[8] = {1, -1, 0, 0, 1, 1, -1, -1};
  static constexpr int kDy[8] = {0, 0, 1, -1, 1, -1, 1, -1};
  bool found = false;
  while (!open.empty()) {
    const auto [f, idx, g_push] = open.top();
    open.pop();
    if (g_push != g[idx]) continue;  // stale entry
    ++out.expansions;
    if (idx == g_idx) {
      found = true;
      break;
    }
    if (cfg.max_expansions && out.expansions >= cfg.max_expansions) break;
    const CellIndex c = map.cell_at(idx);
    for (int k = 0; k < 8; ++k) {
      const int nx = c.ix + kDx[k], ny = c.iy + kDy[k];
      if (!open_cell(nx, ny)) continue;
      const bool diagonal = kDx[k] != 0 && kDy[k] != 0;
      if (diagonal && (!open_cell(c.ix + kDx[k], c.iy) || !open_cell(c.ix, c.iy + kDy[k]))) continue;
      const double len = (diagonal ? std::sqrt(2.0) : 1.0) * res;
      const double weight = 1.0 + cfg.cost_scale * map.cost(nx, ny) / double(mapping::kMaxScaledCost);
      const Fixed step = static_cast<Fixed>(std::llround(len * weight * kFixedScale));
      const std::size_t nidx = map.index(nx, ny);
      const Fixed cand = g[idx] + step;
      if (cand < g[nidx]) {
        g[nidx] = cand;
        parent[nidx] = static_cast<std::int64_t>(idx);
        open.emplace(cand + heuristic(nx, ny), nidx, cand);
      }
    }
  }

  if (!found) {
    out.status = PlanStatus::Unreachable;
    return out;
  }
  std::vector<std::size_t> chain;
  for (std::int64_t k = static_cast<std::int64_t>(g_idx); k >= 0; k = parent[static_cast<std::size_t>(k)])
    chain.push_back(static_cast<std::size_t>(k));
  std::reverse(chain.begin(), chain.end());
  for (auto k : chain) {
    const CellIndex c = map.cell_at(k);
    const Eigen::Vector2d p = map.cell_center(c.ix, c.iy);
    out.path.poses.push_back({p.x(), p.y(), 0.0});
  }
  assign_headings(out.path);
  out.path.cost = static_cast<double>(g[g_idx]) / kFixedScale;
  out.status = PlanStatus::Ok;
  return out;
}

PlanResult plan_astar(const Costmap& map, const Eigen::Vector2d& start, const Eigen::Vector2d& goal,
                      const AstarConfig& cfg) {
  const auto s = map.cell_of(start);
  const auto g = map.cell_of(goal);
  if (!s) throw InvalidEndpoint("start is outside the map");
  if (!g) throw InvalidEndpoint("goal is outside the map");
  PlanResult out = plan_astar(map, *s, *g, cfg);
  if (out.ok()) {
    auto& poses = out.path.poses;
    poses.front().x = start.x();
    poses.front().y = start.y();
    if (poses.size() == 1) {
      if ((goal - start).norm() > 0.0) poses.push_back({goal.x(), goal.y(), 0.0});
    } else {
      poses.back().x = goal.x();
      poses.back().y = goal.y();
    }
    assign_headings(out.path);
  }
  return out;
}

bool segment_free(const Costmap& map, const Eigen::Vector2d& a, const Eigen::Vector2d& b,
                  double step, const std::vector<CellIndex>& allowed) {
  if (!(step > 0.0)) throw DomainError("segment check step must be > 0");
  const double len = (b - a).norm();
  const int n = std::max(1, static_cast<int>(std::ceil(len / step)));
  for (int k = 0; k <= n; ++k) {
    const Eigen::Vector2d p = a + (b - a) * (static_cast<double>(k) / n);
    const auto c = map.cell_of(p);
    if (!c) return false;
    if (map.passable(c->ix, c->iy)) continue;
    if (std::find(allowed.begin(), allowed.end(), *c) != allowed.end()) continue;
    return false;
  }
  return true;
}

bool path_avoids_lethal(const Costmap& map, const Path& path) {
  for (const auto& p : path.poses) {
    const auto c = map.cell_of(p.xy());
    if (!c || map.cost(c->ix, c->iy) == mapping::kLethalCost) return false;
  }
  return true;
}

std::string export_path(const Path& path) {
  std::ostringstream os;
  os << "x,y,theta\n";
  for (const auto& p : path.poses) os << fmt::format("{:.6f},{:.6f},{:.6f}\n", p.x, p.y, p.theta);
  return os.str();
}

}  // namespace lunar::planning
