#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "lunar/common.hpp"

namespace lunar::world {

inline constexpr double kLunarGravity = 1.62;  // m/s^2

struct DepositSpec {
  std::string type_label;
  double mass = 0.0;                        // kg
  std::optional<Eigen::Vector2d> position;  // nullopt: seeded random placement
  double depth = 0.3;                       // m below the local surface
};

struct WorldConfig {
  std::uint64_t seed = 1;
  Eigen::Vector2d box_extent{20.0, 20.0};  // rock box, centered on the origin
  int rock_count = 20;
  double rock_radius_min = 0.2;
  double rock_radius_max = 0.5;
  std::vector<DepositSpec> deposits;
  double terrain_amplitude = 0.1;
  double cell_size = 0.5;
  int grid_nx = 65;  // terrain nodes along x
  int grid_ny = 65;  // terrain nodes along y
  Pose2 home_base_pose;
  std::optional<Eigen::Vector3d> cubesat_position;  // NaN z: resting on the terrain
  int terrain_features = 10;    // bumps and craters
  int landmark_count = 300;     // visual feature points on the ground
  double home_clear_radius = 3.0;

  /// Throws ConfigError naming the violated invariant.
  void validate() const;
};

class Heightfield {
 public:
  Heightfield() = default;
  Heightfield(Eigen::Vector2d origin, double cell_size, int nx, int ny);

  const Eigen::Vector2d& origin() const { return origin_; }
  double cell_size() const { return cell_size_; }
  int nx() const { return nx_; }
  int ny() const { return ny_; }
  double min_x() const { return origin_.x(); }
  double min_y() const { return origin_.y(); }
  double max_x() const { return origin_.x() + (nx_ - 1) * cell_size_; }
  double max_y() const { return origin_.y() + (ny_ - 1) * cell_size_; }

  double& node(int i, int j) { return elevations_[static_cast<std::size_t>(j) * nx_ + i]; }
  double node(int i, int j) const { return elevations_[static_cast<std::size_t>(j) * nx_ + i]; }
  const std::vector<double>& elevations() const { return elevations_; }

  bool contains(double x, double y) const;
  /// Bilinear interpolation; DomainError outside the grid.
  double height_at(double x, double y) const;
  /// Surface gradient (dh/dx, dh/dy) of the bilinear patch containing (x, y).
  Eigen::Vector2d gradient_at(double x, double y) const;

 private:
  // Cell index and local coordinates in [0, 1] for a point inside the grid.
  void locate(double x, double y, int& i, int& j, double& u, double& v) const;

  Eigen::Vector2d origin_ = Eigen::Vector2d::Zero();
  double cell_size_ = 1.0;
  int nx_ = 0;
  int ny_ = 0;
  std::vector<double> elevations_;
};

struct Rock {
  Eigen::Vector3d center;  // z on the terrain surface
  double radius = 0.0;
};

struct VolatileDeposit {
  int id = 0;
  std::string type_label;
  Eigen::Vector3d position;  // z below the surface
  double total_mass = 0.0;
  double remaining_mass = 0.0;
};

struct Landmark {
  int id = 0;
  Eigen::Vector3d position;
};

struct World {
  WorldConfig config;
  Heightfield heightfield;
  std::vector<Rock> rocks;
  std::vector<VolatileDeposit> deposits;
  std::vector<Landmark> ground_features;
  Pose2 home_base_pose;
  Eigen::Vector3d cubesat_position = Eigen::Vector3d::Zero();
  double gravity = kLunarGravity;
};

// Landmark id ranges used by the stereo simulator.
inline constexpr int kRockLandmarkBase = 0;
inline constexpr int kGroundLandmarkBase = 100000;
inline constexpr int kCubesatLandmarkId = 900000;
inline constexpr int kHomeMarkerLandmarkId = 900001;
inline constexpr double kHomeMarkerHeight = 1.0;
inline constexpr double kCubesatHalfSize = 0.15;

World generate_world(const WorldConfig& config);

double height_at(const World& world, double x, double y);

enum class SurfaceKind { Terrain, Rock };

struct RayHit {
  double range = 0.0;
  SurfaceKind kind = SurfaceKind::Terrain;
  int rock_index = -1;
};

/// Nearest intersection with terrain or any rock within max_range.
std::optional<RayHit> raycast(const World& world, const Eigen::Vector3d& origin,
                              const Eigen::Vector3d& direction, double max_range);

/// True when the straight segment a->b is not blocked (endpoint margin in m).
bool line_of_sight(const World& world, const Eigen::Vector3d& a, const Eigen::Vector3d& b,
                   double margin = 0.05);

struct VolatileReading {
  int deposit_id = 0;
  std::string type_label;
  double range = 0.0;  // horizontal distance, m
};

std::vector<VolatileReading> sense_volatiles(const World& world, const Eigen::Vector2d& position,
                                             double radius);

/// Canonical text form; bit-exact (hex floats) so equal worlds compare equal.
std::string serialize_world(const World& world);
std::string world_digest(const World& world);

}  // namespace lunar::world
