#include "lunar/localization.hpp"

#include <cmath>

#include <Eigen/Dense>
#include <boost/math/distributions/chi_squared.hpp>

namespace lunar::localization {

Measurement Measurement::wheel_twist(double v, double omega, const Eigen::Matrix2d& r) {
  return {MeasurementKind::WheelTwist, Eigen::Vector2d(v, omega), r};
}

Measurement Measurement::imu_yaw_rate(double omega, double variance) {
  Eigen::VectorXd z(1);
  z << omega;
  Eigen::MatrixXd r(1, 1);
  r << variance;
  return {MeasurementKind::ImuYawRate, z, r};
}

Measurement Measurement::pose(const Pose2& p, const Eigen::Matrix3d& r) {
  return {MeasurementKind::Pose, Eigen::Vector3d(p.x, p.y, p.theta), r};
}

Eigen::MatrixXd measurement_matrix(MeasurementKind kind) {
  switch (kind) {
    case MeasurementKind::WheelTwist: {
      Eigen::MatrixXd h = Eigen::MatrixXd::Zero(2, 5);
      h(0, kV) = 1.0;
      h(1, kOmega) = 1.0;
      return h;
    }
    case MeasurementKind::ImuYawRate: {
      Eigen::MatrixXd h = Eigen::MatrixXd::Zero(1, 5);
      h(0, kOmega) = 1.0;
      return h;
    }
    case MeasurementKind::Pose: {
      Eigen::MatrixXd h = Eigen::MatrixXd::Zero(3, 5);
      h(0, kX) = 1.0;
      h(1, kY) = 1.0;
      h(2, kTheta) = 1.0;
      return h;
    }
  }
  throw DomainError("unknown measurement kind");
}

Vector5d motion_model(const Vector5d& x, double dt) {
  Vector5d out = x;
  const double th = x(kTheta), v = x(kV), w = x(kOmega);
  if (std::abs(w) > 1e-6) {
    const double th1 = th + w * dt;
    out(kX) = x(kX) + v / w * (std::sin(th1) - std::sin(th));
    out(kY) = x(kY) - v / w * (std::cos(th1) - std::cos(th));
  } else {
    out(kX) = x(kX) + v * std::cos(th) * dt;
    out(kY) = x(kY) + v * std::sin(th) * dt;
  }
  out(kTheta) = wrap_angle(th + w * dt);
  return out;
}

Matrix5d motion_jacobian(const Vector5d& x, double dt) {
  Matrix5d f = Matrix5d::Identity();
  const double th = x(kTheta), v = x(kV), w = x(kOmega);
  const double s0 = std::sin(th), c0 = std::cos(th);
  if (std::abs(w) > 1e-6) {
    const double s1 = std::sin(th + w * dt), c1 = std::cos(th + w * dt);
    f(kX, kTheta) = v / w * (c1 - c0);
    f(kX, kV) = (s1 - s0) / w;
    f(kX, kOmega) = -v / (w * w) * (s1 - s0) + v / w * c1 * dt;
    f(kY, kTheta) = v / w * (s1 - s0);
    f(kY, kV) = -(c1 - c0) / w;
    f(kY, kOmega) = v / (w * w) * (c1 - c0) + v / w * s1 * dt;
  } else {
    f(kX, kTheta) = -v * s0 * dt;
    f(kX, kV) = c0 * dt;
    f(kY, kTheta) = v * c0 * dt;
    f(kY, kV) = s0 * dt;
  }
  f(kTheta, kOmega) = dt;
  return f;
}

namespace {

void symmetrize(Matrix5d& p) { p = 0.5 * (p + p.transpose()).eval(); }

}  // namespace

Belief ekf_predict(const Belief& belief, double dt, const Matrix5d& q) {
  if (!(dt > 0.0)) throw DomainError("predict dt must be > 0");
  Belief out;
  const Matrix5d f = motion_jacobian(belief.mean, dt);
  out.mean = motion_model(belief.mean, dt);
  out.cov = f * belief.cov * f.transpose() + q;
  symmetrize(out.cov);
  return out;
}

double gate_threshold(int dimension, double probability) {
  if (dimension < 1) throw DomainError("gate dimension must be >= 1");
  if (probability >= 1.0) return std::numeric_limits<double>::infinity();
  boost::math::chi_squared dist(dimension);
  return boost::math::quantile(dist, probability);
}

UpdateResult ekf_update(const Belief& belief, const Measurement& z, double gate_probability) {
  const Eigen::MatrixXd h = measurement_matrix(z.kind);
  if (z.value.size() != h.rows() || z.noise.rows() != h.rows() || z.noise.cols() != h.rows())
    throw DomainError("measurement dimension mismatch");

  UpdateResult out;
  out.belief = belief;
  Eigen::VectorXd y = z.value - h * belief.mean;
  if (z.kind == MeasurementKind::Pose) y(2) = wrap_angle(y(2));
  out.innovation = y;

  const Eigen::MatrixXd s = h * belief.cov * h.transpose() + z.noise;
  Eigen::LLT<Eigen::MatrixXd> llt(s);
  if (llt.info() != Eigen::Success || !s.allFinite())
    throw NumericalFailure("innovation covariance is not positive definite");
  // A tiny pivot relative to the largest entry means S is numerically singular.
  const Eigen::VectorXd diag = llt.matrixL().toDenseMatrix().diagonal();
  if (diag.minCoeff() <= 1e-300 || diag.minCoeff() * diag.minCoeff() < 1e-30 * s.cwiseAbs().maxCoeff())
    throw NumericalFailure("innovation covariance is singular");

  out.mahalanobis2 = y.dot(llt.solve(y));
  if (out.mahalanobis2 > gate_threshold(static_cast<int>(y.size()), gate_probability)) {
    out.accepted = false;
    return out;
  }

  const Eigen::MatrixXd k = llt.solve(h * belief.cov).transpose();  // P H^T S^-1
  out.belief.mean = belief.mean + k * y;
  out.belief.mean(kTheta) = wrap_angle(out.belief.mean(kTheta));
  const Matrix5d ikh = Matrix5d::Identity() - k * h;
  out.belief.cov = ikh * belief.cov * ikh.transpose() + k * z.noise * k.transpose();
  symmetrize(out.belief.cov);
  return out;
}

Pose2 compose(const Pose2& a, const Pose2& delta) {
  const Eigen::Vector2d p = body_to_world(a, delta.xy());
  return {p.x(), p.y(), wrap_angle(a.theta + delta.theta)};
}

Pose2 between(const Pose2& a, const Pose2& b) {
  const Eigen::Vector2d p = world_to_body(a, b.xy());
  return {p.x(), p.y(), wrap_angle(b.theta - a.theta)};
}

Measurement vo_delta_to_pose_measurement(const Pose2& anchor, const Pose2& delta,
                                         const Eigen::Matrix3d& delta_noise) {
  const double c = std::cos(anchor.theta), s = std::sin(anchor.theta);
  Eigen::Matrix3d g = Eigen::Matrix3d::Identity();
  g.topLeftCorner<2, 2>() << c, -s, s, c;
  Eigen::Matrix3d r = g * delta_noise * g.transpose();
  r = 0.5 * (r + r.transpose()).eval();
  return Measurement::pose(compose(anchor, delta), r);
}

Matrix5d FilterConfig::process_covariance(double dt) const {
  return Matrix5d(process_noise.asDiagonal()) * dt;
}

Belief FilterConfig::initial_belief(const Pose2& pose) const {
  Belief b;
  b.mean << pose.x, pose.y, wrap_angle(pose.theta), 0.0, 0.0;
  b.cov = initial_sigma.cwiseProduct(initial_sigma).asDiagonal();
  return b;
}

void FilterConfig::validate() const {
  if ((process_noise.array() <= 0.0).any()) throw ConfigError("process noise must be > 0");
  if (!is_spd(odometry_noise) || !(imu_noise > 0.0) || !is_spd(vo_noise))
    throw ConfigError("measurement noise must be symmetric positive definite");
  if ((initial_sigma.array() <= 0.0).any()) throw ConfigError("initial sigma must be > 0");
  if (!(gate_probability > 0.0)) throw ConfigError("gate probability must be > 0");
}

bool is_spd(const Eigen::MatrixXd& m) {
  if (m.rows() != m.cols() || !m.allFinite()) return false;
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12) return false;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff() > 0.0;
}

}  // namespace lunar::localization
