#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "lunar/common.hpp"
#include "lunar/vehicle.hpp"

namespace lunar::mapping {

struct SensorModel {
  double l_hit = 0.85;
  double l_miss = -0.4;
  double l_min = -4.0;
  double l_max = 4.0;
  double occupied_probability = 0.65;
  double point_height_threshold = 0.15;  // m above the ground under the rover

  double occupied_log_odds() const;
  void validate() const;
};

struct CellIndex {
  int ix = 0;
  int iy = 0;

  bool operator==(const CellIndex&) const = default;
};

// Shared cell geometry of grids and costmaps. Cell (ix, iy) covers
// [origin + ix*res, origin + (ix+1)*res) along each axis.
class GridGeometry {
 public:
  GridGeometry() = default;
  GridGeometry(Eigen::Vector2d origin, double resolution, int nx, int ny);

  const Eigen::Vector2d& origin() const { return origin_; }
  double resolution() const { return resolution_; }
  int nx() const { return nx_; }
  int ny() const { return ny_; }
  std::size_t size() const { return static_cast<std::size_t>(nx_) * static_cast<std::size_t>(ny_); }

  bool in_bounds(int ix, int iy) const { return ix >= 0 && iy >= 0 && ix < nx_ && iy < ny_; }
  bool contains(const Eigen::Vector2d& p) const;
  std::optional<CellIndex> cell_of(const Eigen::Vector2d& p) const;
  Eigen::Vector2d cell_center(int ix, int iy) const;
  std::size_t index(int ix, int iy) const {
    return static_cast<std::size_t>(iy) * static_cast<std::size_t>(nx_) + static_cast<std::size_t>(ix);
  }
  CellIndex cell_at(std::size_t index) const {
    return {static_cast<int>(index % static_cast<std::size_t>(nx_)),
            static_cast<int>(index / static_cast<std::size_t>(nx_))};
  }
  bool same_geometry(const GridGeometry& o) const;

 private:
  Eigen::Vector2d origin_ = Eigen::Vector2d::Zero();
  double resolution_ = 1.0;
  int nx_ = 0;
  int ny_ = 0;
};

class OccupancyGrid : public GridGeometry {
 public:
  OccupancyGrid() = default;
  OccupancyGrid(Eigen::Vector2d origin, double resolution, int nx, int ny);

  double log_odds(int ix, int iy) const { return log_odds_[index(ix, iy)]; }
  bool observed(int ix, int iy) const { return observed_[index(ix, iy)] != 0; }
  void set_log_odds(int ix, int iy, double value);
  /// Adds delta to a cell and clamps.
  void update(int ix, int iy, double delta, const SensorModel& model);
  bool occupied(int ix, int iy, const SensorModel& model) const;
  const std::vector<double>& data() const { return log_odds_; }

 private:
  std::vector<double> log_odds_;
  std::vector<std::uint8_t> observed_;
};

/// Cells crossed by the segment a->b in order, both endpoint cells included,
/// clipped to the grid. Exact grid-line stepping.
std::vector<CellIndex> traverse(const GridGeometry& grid, const Eigen::Vector2d& a,
                                const Eigen::Vector2d& b);

/// Ray update from `origin` to `end`: misses on every crossed cell except the
/// last, which takes a hit when `hit` is set and a miss otherwise.
void integrate_ray(OccupancyGrid& grid, const Eigen::Vector2d& origin, const Eigen::Vector2d& end,
                   bool hit, const SensorModel& model);

/// Lidar scan taken at a planar sensor pose.
void integrate_scan(OccupancyGrid& grid, const Pose2& sensor_pose, const vehicle::LidarScan& scan,
                    const SensorModel& model);

/// Sensor-frame points (x forward, y left, z up). `sensor_height` is the
/// sensor height above the local ground; points lower than the threshold
/// above ground are ignored.
void integrate_points(OccupancyGrid& grid, const Pose2& sensor_pose, double sensor_height,
                      const std::vector<Eigen::Vector3d>& points, const SensorModel& model);

inline constexpr std::uint8_t kFreeCost = 0;
inline constexpr std::uint8_t kMaxScaledCost = 252;
inline constexpr std::uint8_t kInscribedCost = 253;
inline constexpr std::uint8_t kLethalCost = 254;
inline constexpr std::uint8_t kUnknownCost = 255;

class Costmap : public GridGeometry {
 public:
  Costmap() = default;
  Costmap(Eigen::Vector2d origin, double resolution, int nx, int ny, std::uint8_t fill = kFreeCost);
  explicit Costmap(const GridGeometry& geometry, std::uint8_t fill = kFreeCost);

  std::uint8_t cost(int ix, int iy) const { return cost_[index(ix, iy)]; }
  void set_cost(int ix, int iy, std::uint8_t c) { cost_[index(ix, iy)] = c; }
  /// Cells at or above the inscribed cost cannot hold the robot center.
  bool passable(int ix, int iy) const { return in_bounds(ix, iy) && cost(ix, iy) < kInscribedCost; }
  bool passable(const Eigen::Vector2d& p) const;
  const std::vector<std::uint8_t>& data() const { return cost_; }

 private:
  std::vector<std::uint8_t> cost_;
};

struct InflationConfig {
  double robot_radius = 1.0;  // m
  double decay = 0.5;         // m, e-folding distance of the cost beyond the radius
  bool track_unknown = false;  // unobserved cells cost kUnknownCost instead of free
};

Costmap inflate(const OccupancyGrid& grid, const SensorModel& model, const InflationConfig& cfg);

/// Inflation of an explicit set of lethal cells on a blank geometry.
Costmap inflate_cells(const GridGeometry& geometry, const std::vector<CellIndex>& lethal,
                      const InflationConfig& cfg);

/// Euclidean distance (m, between cell centers) to the nearest cell whose
/// cost is at least `threshold`. Infinity when there is none.
std::vector<double> distance_field(const Costmap& costmap, std::uint8_t threshold);

/// Plain-text graymap (P2). Higher values are darker obstacles for the grid.
std::string export_pgm(const OccupancyGrid& grid);
std::string export_pgm(const Costmap& costmap);

}  // namespace lunar::mapping
