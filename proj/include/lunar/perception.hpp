#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "lunar/common.hpp"
#include "lunar/rng.hpp"
#include "lunar/world.hpp"

namespace lunar::perception {

// Camera base frame: origin midway between the two cameras, z along the
// optical axis, x to the right, y down. Pixel coordinates are on the
// normalized image plane scaled by the focal length.
struct StereoSpec {
  double focal = 700.0;        // pixels
  double half_baseline = 0.2;  // m
  double half_width = 512.0;   // image bounds, pixels from the principal point
  double half_height = 384.0;
  double pixel_sigma = 0.1;

  void validate() const;
};

struct PixelPair {
  double u_left = 0.0;
  double v_left = 0.0;
  double u_right = 0.0;
  double v_right = 0.0;
  int landmark_id = -1;
};

struct StereoFrame {
  std::vector<PixelPair> pairs;
};

PixelPair project(const Eigen::Vector3d& p, const StereoSpec& spec);
Eigen::Vector3d triangulate(const PixelPair& pair, const StereoSpec& spec);

/// Maps a camera-frame point into a level sensor frame (x forward, y left, z up).
Eigen::Vector3d camera_to_sensor(const Eigen::Vector3d& p);
Eigen::Vector3d sensor_to_camera(const Eigen::Vector3d& p);

struct RansacConfig {
  int iterations = 50;
  double inlier_threshold = 0.1;  // m
  int sample_size = 3;
};

struct IdPoint {
  int id = -1;
  Eigen::Vector3d p;
};

struct MotionEstimate {
  Eigen::Isometry3d motion = Eigen::Isometry3d::Identity();  // camera prev -> curr
  std::vector<int> inlier_ids;
  double rms_residual = 0.0;
};

/// Least-squares rigid transform T with dst ~ T * src (centroid + SVD).
Eigen::Isometry3d fit_rigid(const std::vector<Eigen::Vector3d>& src,
                            const std::vector<Eigen::Vector3d>& dst);

/// Camera motion between two frames of id-tagged points. For static
/// landmarks p_curr = motion^-1 * p_prev.
MotionEstimate estimate_motion(const std::vector<IdPoint>& points_prev,
                               const std::vector<IdPoint>& points_curr, const RansacConfig& cfg,
                               Rng& rng);

/// Triangulates both frames and matches by landmark id.
MotionEstimate visual_odometry(const StereoFrame& prev, const StereoFrame& curr,
                               const StereoSpec& spec, const RansacConfig& cfg, Rng& rng);

std::vector<IdPoint> triangulate_frame(const StereoFrame& frame, const StereoSpec& spec);

enum class ObjectClass { Cubesat, Lander, Rock };

std::string to_string(ObjectClass c);

struct Detection {
  ObjectClass label = ObjectClass::Cubesat;
  double bearing = 0.0;    // rad, positive to the left of the optical axis
  double elevation = 0.0;  // rad, positive up
  double range = 0.0;      // m
};

struct DetectorConfig {
  double max_range = 15.0;
  double fov = 60.0 * kPi / 180.0;
  double p_detect = 0.9;
  double bearing_sigma = 1.0 * kPi / 180.0;
  double elevation_sigma = 1.0 * kPi / 180.0;
  double range_sigma_fraction = 0.02;
  bool include_rocks = false;
};

std::vector<Detection> detect_objects(const world::World& world, const SensorPose& camera,
                                      const DetectorConfig& cfg, Rng& rng);

struct PosedDetection {
  SensorPose camera;
  Detection detection;
};

struct ObjectEstimate {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  Eigen::Matrix3d covariance = Eigen::Matrix3d::Identity();
  int iterations = 0;
  double cost = 0.0;
  std::vector<double> cost_history;  // cost after each accepted step, starting at the initial guess
};

/// Weighted Gauss-Newton fit over bearing, elevation, and range residuals.
ObjectEstimate estimate_object_position(const std::vector<PosedDetection>& detections,
                                        const DetectorConfig& noise = {});

/// Back-projection of a single detection into the world.
Eigen::Vector3d detection_to_world(const PosedDetection& d);

}  // namespace lunar::perception
