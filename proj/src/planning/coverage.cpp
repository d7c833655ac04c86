#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

#include "lunar/planning.hpp"

namespace lunar::planning {

Eigen::Vector2d Region::to_world(const Eigen::Vector2d& local) const {
  const double c = std::cos(orientation), s = std::sin(orientation);
  return origin + Eigen::Vector2d(c * local.x() - s * local.y(), s * local.x() + c * local.y());
}

bool Region::contains(const Eigen::Vector2d& world) const {
  const double c = std::cos(orientation), s = std::sin(orientation);
  const Eigen::Vector2d d = world - origin;
  const double lx = c * d.x() + s * d.y(), ly = -s * d.x() + c * d.y();
  return lx >= 0.0 && ly >= 0.0 && lx <= extent.x() && ly <= extent.y();
}

namespace {

// Cells 8-connected to `start` through passable cells, with the same
// corner rule as the grid search.
std::vector<char> reachable_cells(const Costmap& map, const CellIndex& start) {
  std::vector<char> seen(map.size(), 0);
  if (!map.passable(start.ix, start.iy)) return seen;
  std::deque<CellIndex> queue{start};
  seen[map.index(start.ix, start.iy)] = 1;
  static constexpr int kDx[8] = {1, -1, 0, 0, 1, 1, -1, -1};
  static constexpr int kDy[8] = {0, 0, 1, -1, 1, -1, 1, -1};
  while (!queue.empty()) {
    const CellIndex c = queue.front();
    queue.pop_front();
    for (int k = 0; k < 8; ++k) {
      const int nx = c.ix + kDx[k], ny = c.iy + kDy[k];
      if (!map.passable(nx, ny) || seen[map.index(nx, ny)]) continue;
      if (kDx[k] && kDy[k] && (!map.passable(c.ix + kDx[k], c.iy) || !map.passable(c.ix, c.iy + kDy[k])))
        continue;
      seen[map.index(nx, ny)] = 1;
      queue.push_back({nx, ny});
    }
  }
  return seen;
}

double point_segment_distance(const Eigen::Vector2d& p, const Eigen::Vector2d& a,
                              const Eigen::Vector2d& b) {
  const Eigen::Vector2d ab = b - a;
  const double l2 = ab.squaredNorm();
  const double t = l2 > 0.0 ? std::clamp((p - a).dot(ab) / l2, 0.0, 1.0) : 0.0;
  return (p - (a + t * ab)).norm();
}

// Marks every cell whose center is within radius of the segment.
void stamp_segment(const Costmap& map, const Eigen::Vector2d& a, const Eigen::Vector2d& b,
                   double radius, std::vector<char>& covered) {
  const double res = map.resolution();
  const Eigen::Vector2d lo = a.cwiseMin(b).array() - radius;
  const Eigen::Vector2d hi = a.cwiseMax(b).array() + radius;
  const int ix0 = std::max(0, static_cast<int>(std::floor((lo.x() - map.origin().x()) / res)));
  const int iy0 = std::max(0, static_cast<int>(std::floor((lo.y() - map.origin().y()) / res)));
  const int ix1 = std::min(map.nx() - 1, static_cast<int>(std::floor((hi.x() - map.origin().x()) / res)));
  const int iy1 = std::min(map.ny() - 1, static_cast<int>(std::floor((hi.y() - map.origin().y()) / res)));
  for (int iy = iy0; iy <= iy1; ++iy)
    for (int ix = ix0; ix <= ix1; ++ix)
      if (point_segment_distance(map.cell_center(ix, iy), a, b) <= radius + 1e-9)
        covered[map.index(ix, iy)] = 1;
}

void stamp_path(const Costmap& map, const Path& path, std::size_t from, double radius,
                std::vector<char>& covered) {
  const auto& p = path.poses;
  if (p.size() == 1 && from == 0) stamp_segment(map, p[0].xy(), p[0].xy(), radius, covered);
  for (std::size_t k = std::max<std::size_t>(from, 1); k < p.size(); ++k)
    stamp_segment(map, p[k - 1].xy(), p[k].xy(), radius, covered);
}

void append(Path& path, const Eigen::Vector2d& p) {
  if (!path.poses.empty() && (path.poses.back().xy() - p).norm() < 1e-12) return;
  path.poses.push_back({p.x(), p.y(), 0.0});
}

}  // namespace

double coverage_fraction(const Path& path, double radius, const Costmap& map, const Region& region,
                         const Eigen::Vector2d& start) {
  const auto sc = map.cell_of(start);
  if (!sc) return 0.0;
  const auto reach = reachable_cells(map, *sc);
  std::vector<char> covered(map.size(), 0);
  stamp_path(map, path, 0, radius, covered);
  std::size_t total = 0, hit = 0;
  for (std::size_t k = 0; k < map.size(); ++k) {
    if (!reach[k]) continue;
    const CellIndex c = map.cell_at(k);
    if (!region.contains(map.cell_center(c.ix, c.iy))) continue;
    ++total;
    if (covered[k]) ++hit;
  }
  return total ? static_cast<double>(hit) / static_cast<double>(total) : 1.0;
}

CoverageResult plan_coverage(const Region& region, double footprint_width, const Costmap& map,
                             const CoverageConfig& cfg) {
  if (!(footprint_width > 0.0)) throw DomainError("footprint width must be > 0");
  if (!(region.extent.x() > 0.0) || !(region.extent.y() > 0.0))
    throw DomainError("coverage region must have positive extent");

  CoverageResult out;
  const double width = region.extent.x(), height = region.extent.y();
  out.rows = std::max(1, static_cast<int>(std::ceil(height / footprint_width - 1e-9)));
  out.row_length_total = out.rows * width;
  const double res = map.resolution();
  const double spacing = 0.5 * res;
  const int samples = std::max(1, static_cast<int>(std::ceil(width / spacing)));
  constexpr double kInset = 1e-6;  // keep row ends off the region boundary

  // Free runs of each row, in sweep order.
  std::vector<std::vector<Eigen::Vector2d>> runs;
  for (int r = 0; r < out.rows; ++r) {
    const double y = (r + 0.5) * height / out.rows;
    std::vector<Eigen::Vector2d> run;
    for (int k = 0; k <= samples; ++k) {
      double x = kInset + (width - 2.0 * kInset) * k / samples;
      if (r % 2 == 1) x = width - x;
      const Eigen::Vector2d p = region.to_world({x, y});
      if (map.passable(p)) {
        run.push_back(p);
      } else if (!run.empty()) {
        runs.push_back(std::move(run));
        run.clear();
      }
    }
    if (!run.empty()) runs.push_back(std::move(run));
  }
  if (runs.empty()) {
    out.status = PlanStatus::Empty;
    return out;
  }

  Path& path = out.path;
  const Eigen::Vector2d start = runs.front().front();
  for (const auto& run : runs) {
    if (!path.empty()) {
      const Eigen::Vector2d from = path.poses.back().xy();
      if (!segment_free(map, from, run.front(), 0.5 * res)) {
        const PlanResult detour = plan_astar(map, from, run.front(), cfg.astar);
        if (!detour.ok()) continue;  // unreachable from here; completion pass decides
        for (const auto& p : detour.path.poses) append(path, p.xy());
      }
    }
    for (const auto& p : run) append(path, p);
  }

  const double radius = 0.5 * footprint_width;
  if (cfg.completion_pass) {
    const auto reach = reachable_cells(map, *map.cell_of(start));
    std::vector<char> covered(map.size(), 0);
    stamp_path(map, path, 0, radius, covered);
    std::vector<std::size_t> pending;
    for (std::size_t k = 0; k < map.size(); ++k) {
      const CellIndex c = map.cell_at(k);
      if (reach[k] && !covered[k] && region.contains(map.cell_center(c.ix, c.iy))) pending.push_back(k);
    }
    while (true) {
      const Eigen::Vector2d here = path.poses.back().xy();
      std::size_t best = map.size();
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t k : pending) {
        if (covered[k]) continue;
        const CellIndex c = map.cell_at(k);
        const double d = (map.cell_center(c.ix, c.iy) - here).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = k;
        }
      }
      if (best == map.size()) break;
      const CellIndex c = map.cell_at(best);
      const PlanResult leg = plan_astar(map, here, map.cell_center(c.ix, c.iy), cfg.astar);
      if (!leg.ok()) {
        covered[best] = 1;  // cannot happen for reachable cells; avoid looping
        continue;
      }
      const std::size_t before = path.poses.size();
      for (const auto& p : leg.path.poses) append(path, p.xy());
      stamp_path(map, path, before, radius, covered);
      covered[best] = 1;
    }
  }

  assign_headings(path);
  path.cost = path.length();
  out.covered_fraction = coverage_fraction(path, radius, map, region, start);
  out.status = PlanStatus::Ok;
  return out;
}

}  // namespace lunar::planning
