#include "lunar/mapping.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <fmt/format.h>

namespace lunar::mapping {

double SensorModel::occupied_log_odds() const {
  return std::log(occupied_probability / (1.0 - occupied_probability));
}

void SensorModel::validate() const {
  if (!(l_min < 0.0) || !(l_max > 0.0)) throw ConfigError("log-odds clamps must straddle zero");
  if (!(l_hit > 0.0) || !(l_miss < 0.0)) throw ConfigError("l_hit must be > 0 and l_miss < 0");
  if (!(occupied_probability > 0.5 && occupied_probability < 1.0))
    throw ConfigError("occupancy threshold must lie in (0.5, 1)");
  if (point_height_threshold < 0.0) throw ConfigError("point height threshold must be >= 0");
}

GridGeometry::GridGeometry(Eigen::Vector2d origin, double resolution, int nx, int ny)
    : origin_(origin), resolution_(resolution), nx_(nx), ny_(ny) {
  if (!(resolution > 0.0)) throw DomainError("grid resolution must be > 0");
  if (nx < 1 || ny < 1) throw DomainError("grid must have at least one cell");
}

bool GridGeometry::contains(const Eigen::Vector2d& p) const {
  return p.x() >= origin_.x() && p.y() >= origin_.y() && p.x() < origin_.x() + nx_ * resolution_ &&
         p.y() < origin_.y() + ny_ * resolution_;
}

std::optional<CellIndex> GridGeometry::cell_of(const Eigen::Vector2d& p) const {
  if (!contains(p)) return std::nullopt;
  const int ix = std::min(nx_ - 1, static_cast<int>(std::floor((p.x() - origin_.x()) / resolution_)));
  const int iy = std::min(ny_ - 1, static_cast<int>(std::floor((p.y() - origin_.y()) / resolution_)));
  return CellIndex{ix, iy};
}

Eigen::Vector2d GridGeometry::cell_center(int ix, int iy) const {
  return {origin_.x() + (ix + 0.5) * resolution_, origin_.y() + (iy + 0.5) * resolution_};
}

bool GridGeometry::same_geometry(const GridGeometry& o) const {
  return origin_ == o.origin_ && resolution_ == o.resolution_ && nx_ == o.nx_ && ny_ == o.ny_;
}

OccupancyGrid::OccupancyGrid(Eigen::Vector2d origin, double resolution, int nx, int ny)
    : GridGeometry(origin, resolution, nx, ny), log_odds_(size(), 0.0), observed_(size(), 0) {}

void OccupancyGrid::set_log_odds(int ix, int iy, double value) {
  log_odds_[index(ix, iy)] = value;
  observed_[index(ix, iy)] = 1;
}

void OccupancyGrid::update(int ix, int iy, double delta, const SensorModel& model) {
  const std::size_t k = index(ix, iy);
  log_odds_[k] = std::clamp(log_odds_[k] + delta, model.l_min, model.l_max);
  observed_[k] = 1;
}

bool OccupancyGrid::occupied(int ix, int iy, const SensorModel& model) const {
  return log_odds(ix, iy) > model.occupied_log_odds();
}

std::vector<CellIndex> traverse(const GridGeometry& grid, const Eigen::Vector2d& a,
                                const Eigen::Vector2d& b) {
  const double res = grid.resolution();
  const Eigen::Vector2d lo = grid.origin();
  const Eigen::Vector2d hi = lo + Eigen::Vector2d(grid.nx() * res, grid.ny() * res);
  const Eigen::Vector2d d = b - a;

  // Clip the segment to the grid box (slab method).
  double t0 = 0.0, t1 = 1.0;
  for (int axis = 0; axis < 2; ++axis) {
    if (d(axis) == 0.0) {
      if (a(axis) < lo(axis) || a(axis) > hi(axis)) return {};
      continue;
    }
    double ta = (lo(axis) - a(axis)) / d(axis);
    double tb = (hi(axis) - a(axis)) / d(axis);
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return {};
  }
  const Eigen::Vector2d p0 = a + t0 * d;
  const Eigen::Vector2d p1 = a + t1 * d;

  auto clamp_cell = [&](const Eigen::Vector2d& p) {
    return CellIndex{std::clamp(static_cast<int>(std::floor((p.x() - lo.x()) / res)), 0, grid.nx() - 1),
                     std::clamp(static_cast<int>(std::floor((p.y() - lo.y()) / res)), 0, grid.ny() - 1)};
  };
  CellIndex cell = clamp_cell(p0);
  const CellIndex last = clamp_cell(p1);

  const int step_x = d.x() > 0.0 ? 1 : (d.x() < 0.0 ? -1 : 0);
  const int step_y = d.y() > 0.0 ? 1 : (d.y() < 0.0 ? -1 : 0);
  const double inf = std::numeric_limits<double>::infinity();
  // Parameter (along the full segment) where the ray crosses the next grid line.
  auto first_crossing = [&](int axis, int idx, int step) {
    if (step == 0) return inf;
    const double boundary = lo(axis) + (idx + (step > 0 ? 1 : 0)) * res;
    return (boundary - a(axis)) / d(axis);
  };
  double t_max_x = first_crossing(0, cell.ix, step_x);
  double t_max_y = first_crossing(1, cell.iy, step_y);
  const double t_delta_x = step_x ? res / std::abs(d.x()) : inf;
  const double t_delta_y = step_y ? res / std::abs(d.y()) : inf;

  std::vector<CellIndex> out;
  const int guard = grid.nx() + grid.ny() + 4;
  out.push_back(cell);
  for (int n = 0; n < guard && !(cell == last); ++n) {
    if (t_max_x <= t_max_y) {
      if (t_max_x > t1) break;
      cell.ix += step_x;
      t_max_x += t_delta_x;
    } else {
      if (t_max_y > t1) break;
      cell.iy += step_y;
      t_max_y += t_delta_y;
    }
    if (!grid.in_bounds(cell.ix, cell.iy)) break;
    out.push_back(cell);
  }
  return out;
}

void integrate_ray(OccupancyGrid& grid, const Eigen::Vector2d& origin, const Eigen::Vector2d& end,
                   bool hit, const SensorModel& model) {
  const auto cells = traverse(grid, origin, end);
  if (cells.empty()) return;
  const auto end_cell = grid.cell_of(end);
  const bool mark_hit = hit && end_cell && *end_cell == cells.back();
  for (std::size_t k = 0; k < cells.size(); ++k) {
    const bool is_hit = mark_hit && k + 1 == cells.size();
    grid.update(cells[k].ix, cells[k].iy, is_hit ? model.l_hit : model.l_miss, model);
  }
}

void integrate_scan(OccupancyGrid& grid, const Pose2& sensor_pose, const vehicle::LidarScan& scan,
                    const SensorModel& model) {
  const Eigen::Vector2d origin = sensor_pose.xy();
  for (std::size_t k = 0; k < scan.size(); ++k) {
    const double r = scan.ranges[k];
    const double a = sensor_pose.theta + scan.angle(k);
    const bool hit = std::isfinite(r);
    const double len = hit ? r : scan.max_range;
    const Eigen::Vector2d end = origin + len * Eigen::Vector2d(std::cos(a), std::sin(a));
    integrate_ray(grid, origin, end, hit, model);
  }
}

void integrate_points(OccupancyGrid& grid, const Pose2& sensor_pose, double sensor_height,
                      const std::vector<Eigen::Vector3d>& points, const SensorModel& model) {
  for (const auto& p : points) {
    if (sensor_height + p.z() < model.point_height_threshold) continue;
    const Eigen::Vector2d end = body_to_world(sensor_pose, p.head<2>());
    integrate_ray(grid, sensor_pose.xy(), end, true, model);
  }
}

Costmap::Costmap(Eigen::Vector2d origin, double resolution, int nx, int ny, std::uint8_t fill)
    : GridGeometry(origin, resolution, nx, ny), cost_(size(), fill) {}

Costmap::Costmap(const GridGeometry& geometry, std::uint8_t fill)
    : GridGeometry(geometry), cost_(size(), fill) {}

bool Costmap::passable(const Eigen::Vector2d& p) const {
  const auto c = cell_of(p);
  return c && passable(c->ix, c->iy);
}

namespace {

void stamp(Costmap& map, const CellIndex& lethal, const InflationConfig& cfg) {
  const double res = map.resolution();
  const double cutoff =
      cfg.robot_radius + (cfg.decay > 0.0 ? cfg.decay * std::log(double(kMaxScaledCost)) : 0.0);
  const int reach = static_cast<int>(std::ceil(cutoff / res)) + 1;
  for (int dy = -reach; dy <= reach; ++dy) {
    for (int dx = -reach; dx <= reach; ++dx) {
      const int ix = lethal.ix + dx, iy = lethal.iy + dy;
      if (!map.in_bounds(ix, iy)) continue;
      const double d = std::hypot(dx, dy) * res;
      std::uint8_t c;
      if (dx == 0 && dy == 0) {
        c = kLethalCost;
      } else if (d <= cfg.robot_radius + 1e-9) {
        c = kInscribedCost;
      } else if (cfg.decay > 0.0) {
        const double v = std::floor(kMaxScaledCost * std::exp(-(d - cfg.robot_radius) / cfg.decay));
        if (v < 1.0) continue;
        c = static_cast<std::uint8_t>(std::min(v, double(kMaxScaledCost)));
      } else {
        continue;
      }
      if (c > map.cost(ix, iy)) map.set_cost(ix, iy, c);
    }
  }
}

}  // namespace

Costmap inflate_cells(const GridGeometry& geometry, const std::vector<CellIndex>& lethal,
                      const InflationConfig& cfg) {
  if (cfg.robot_radius < 0.0) throw DomainError("robot radius must be >= 0");
  if (cfg.decay < 0.0) throw DomainError("inflation decay must be >= 0");
  Costmap map(geometry, kFreeCost);
  for (const auto& c : lethal) stamp(map, c, cfg);
  return map;
}

Costmap inflate(const OccupancyGrid& grid, const SensorModel& model, const InflationConfig& cfg) {
  if (cfg.robot_radius < 0.0) throw DomainError("robot radius must be >= 0");
  if (cfg.decay < 0.0) throw DomainError("inflation decay must be >= 0");
  Costmap map(static_cast<const GridGeometry&>(grid), kFreeCost);
  if (cfg.track_unknown) {
    for (int iy = 0; iy < grid.ny(); ++iy)
      for (int ix = 0; ix < grid.nx(); ++ix)
        if (!grid.observed(ix, iy)) map.set_cost(ix, iy, kUnknownCost);
  }
  for (int iy = 0; iy < grid.ny(); ++iy)
    for (int ix = 0; ix < grid.nx(); ++ix)
      if (grid.occupied(ix, iy, model)) stamp(map, {ix, iy}, cfg);
  return map;
}

namespace {

// One-dimensional squared distance transform of a sampled function
// (lower envelope of parabolas).
void edt_1d(const std::vector<double>& f, std::vector<double>& out, std::vector<int>& v,
            std::vector<double>& z) {
  const int n = static_cast<int>(f.size());
  const double inf = std::numeric_limits<double>::infinity();
  int k = 0;
  v[0] = 0;
  z[0] = -inf;
  z[1] = inf;
  for (int q = 1; q < n; ++q) {
    if (!std::isfinite(f[q])) continue;
    if (!std::isfinite(f[v[k]])) {
      v[k] = q;
      continue;
    }
    double s;
    while (true) {
      s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
      if (s <= z[k] && k > 0) {
        --k;
      } else {
        break;
      }
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = inf;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    const double dq = q - v[k];
    out[q] = std::isfinite(f[v[k]]) ? dq * dq + f[v[k]] : inf;
  }
}

}  // namespace

std::vector<double> distance_field(const Costmap& costmap, std::uint8_t threshold) {
  const int nx = costmap.nx(), ny = costmap.ny();
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> grid(costmap.size(), inf);
  for (int iy = 0; iy < ny; ++iy)
    for (int ix = 0; ix < nx; ++ix)
      if (costmap.cost(ix, iy) >= threshold) grid[costmap.index(ix, iy)] = 0.0;

  const int n = std::max(nx, ny);
  std::vector<double> f(n), out(n), z(n + 1);
  std::vector<int> v(n);
  for (int ix = 0; ix < nx; ++ix) {
    f.assign(ny, inf);
    out.assign(ny, inf);
    for (int iy = 0; iy < ny; ++iy) f[iy] = grid[costmap.index(ix, iy)];
    edt_1d(f, out, v, z);
    for (int iy = 0; iy < ny; ++iy) grid[costmap.index(ix, iy)] = out[iy];
  }
  for (int iy = 0; iy < ny; ++iy) {
    f.assign(nx, inf);
    out.assign(nx, inf);
    for (int ix = 0; ix < nx; ++ix) f[ix] = grid[costmap.index(ix, iy)];
    edt_1d(f, out, v, z);
    for (int ix = 0; ix < nx; ++ix) grid[costmap.index(ix, iy)] = out[ix];
  }
  for (auto& d : grid) d = std::isfinite(d) ? std::sqrt(d) * costmap.resolution() : inf;
  return grid;
}

namespace {

template <typename PixelFn>
std::string write_pgm(const GridGeometry& g, PixelFn pixel) {
  std::ostringstream os;
  os << "P2\n";
  os << fmt::format("# origin {:.6f} {:.6f} resolution {:.6f}\n", g.origin().x(), g.origin().y(),
                    g.resolution());
  os << g.nx() << ' ' << g.ny() << "\n255\n";
  // Top image row is the highest y.
  for (int iy = g.ny() - 1; iy >= 0; --iy) {
    for (int ix = 0; ix < g.nx(); ++ix) {
      if (ix) os << ' ';
      os << static_cast<int>(pixel(ix, iy));
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace

std::string export_pgm(const OccupancyGrid& grid) {
  return write_pgm(grid, [&](int ix, int iy) {
    const double p = 1.0 / (1.0 + std::exp(-grid.log_odds(ix, iy)));
    // White is free, black is occupied.
    return static_cast<int>(std::lround((1.0 - p) * 255.0));
  });
}

std::string export_pgm(const Costmap& costmap) {
  return write_pgm(costmap, [&](int ix, int iy) { return costmap.cost(ix, iy); });
}

}  // namespace lunar::mapping
