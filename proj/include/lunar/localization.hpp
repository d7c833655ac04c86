#pragma once

#include <Eigen/Core>

#include "lunar/common.hpp"

namespace lunar::localization {

using Vector5d = Eigen::Matrix<double, 5, 1>;
using Matrix5d = Eigen::Matrix<double, 5, 5>;

enum StateIndex : int { kX = 0, kY = 1, kTheta = 2, kV = 3, kOmega = 4 };

struct Belief {
  Vector5d mean = Vector5d::Zero();
  Matrix5d cov = Matrix5d::Identity();

  Pose2 pose() const { return {mean(kX), mean(kY), mean(kTheta)}; }
};

enum class MeasurementKind { WheelTwist, ImuYawRate, Pose };

struct Measurement {
  MeasurementKind kind = MeasurementKind::Pose;
  Eigen::VectorXd value;
  Eigen::MatrixXd noise;  // R

  static Measurement wheel_twist(double v, double omega, const Eigen::Matrix2d& r);
  static Measurement imu_yaw_rate(double omega, double variance);
  static Measurement pose(const Pose2& p, const Eigen::Matrix3d& r);

  int dimension() const { return static_cast<int>(value.size()); }
};

/// Measurement matrix selecting the observed state components.
Eigen::MatrixXd measurement_matrix(MeasurementKind kind);

/// Unicycle propagation; exact arc when |omega| > 1e-6.
Vector5d motion_model(const Vector5d& x, double dt);
Matrix5d motion_jacobian(const Vector5d& x, double dt);

Belief ekf_predict(const Belief& belief, double dt, const Matrix5d& q);

struct UpdateResult {
  Belief belief;
  Eigen::VectorXd innovation;
  double mahalanobis2 = 0.0;
  bool accepted = true;
};

/// chi-square quantile used to gate a measurement of the given dimension.
double gate_threshold(int dimension, double probability = 0.99);

/// EKF update with Joseph-form covariance. Gated measurements leave the
/// belief untouched. Throws NumericalFailure on a singular innovation
/// covariance. Pass gate_probability >= 1 to disable gating.
UpdateResult ekf_update(const Belief& belief, const Measurement& z, double gate_probability = 0.99);

/// World-frame pose measurement from a body-frame pose delta measured since
/// `anchor` (the estimated pose at the earlier frame).
Measurement vo_delta_to_pose_measurement(const Pose2& anchor, const Pose2& delta,
                                         const Eigen::Matrix3d& delta_noise);

/// Composes a body-frame delta onto a pose.
Pose2 compose(const Pose2& a, const Pose2& delta);
/// Body-frame delta taking `a` to `b`.
Pose2 between(const Pose2& a, const Pose2& b);

struct FilterConfig {
  // Process noise spectral densities; Q = diag(q) * dt.
  Vector5d process_noise = (Vector5d() << 1e-4, 1e-4, 1e-5, 0.5, 0.5).finished();
  Eigen::Matrix2d odometry_noise = Eigen::Vector2d(0.02 * 0.02, 0.05 * 0.05).asDiagonal();
  double imu_noise = 0.005 * 0.005;
  Eigen::Matrix3d vo_noise = Eigen::Vector3d(0.02 * 0.02, 0.02 * 0.02, 0.01 * 0.01).asDiagonal();
  Vector5d initial_sigma = (Vector5d() << 0.05, 0.05, 0.01, 0.05, 0.05).finished();
  double gate_probability = 0.99;

  Matrix5d process_covariance(double dt) const;
  Belief initial_belief(const Pose2& pose) const;
  void validate() const;
};

/// Symmetric to 1e-12 with strictly positive eigenvalues.
bool is_spd(const Eigen::MatrixXd& m);

}  // namespace lunar::localization
