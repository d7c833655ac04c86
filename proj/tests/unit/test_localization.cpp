#include <doctest.h>

#include <cmath>

#include "lunar/localization.hpp"
#include "lunar/rng.hpp"

using namespace lunar;
using namespace lunar::localization;

namespace {

Vector5d state(double x, double y, double th, double v, double w) {
  Vector5d s;
  s << x, y, th, v, w;
  return s;
}

// Rotation about the instantaneous centre, written out independently.
Eigen::Vector3d arc_oracle(const Vector5d& s, double dt) {
  const double th = s(2), v = s(3), w = s(4);
  if (w == 0.0) return {s(0) + v * dt * std::cos(th), s(1) + v * dt * std::sin(th), th};
  const double r = v / w;
  const Eigen::Vector2d centre(s(0) - r * std::sin(th), s(1) + r * std::cos(th));
  const double th1 = th + w * dt;
  return {centre.x() + r * std::sin(th1), centre.y() - r * std::cos(th1), wrap_angle(th1)};
}

Belief random_belief(Rng& rng) {
  Belief b;
  b.mean = state(rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(-kPi, kPi), rng.uniform(-1, 1),
                 rng.uniform(-0.5, 0.5));
  Matrix5d a;
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) a(i, j) = rng.normal(0.0, 0.1);
  b.cov = a * a.transpose() + 1e-3 * Matrix5d::Identity();
  return b;
}

}  // namespace

TEST_CASE("predict examples") {
  const Matrix5d q = Vector5d(1, 2, 3, 4, 5).asDiagonal() * 1e-3;
  Belief b;
  b.mean = state(1.0, 2.0, 0.3, 0.0, 0.0);
  // At rest F still couples pose to (v, omega); with no rate uncertainty
  // the propagated covariance is exactly P + Q.
  b.cov = Vector5d(1, 1, 1, 0, 0).asDiagonal();
  const auto still = ekf_predict(b, 0.5, q);
  CHECK((still.mean - b.mean).norm() == 0.0);
  CHECK((still.cov - (b.cov + q)).norm() < 1e-15);

  b.mean = state(0.0, 0.0, 0.0, 1.0, 0.0);
  CHECK(ekf_predict(b, 1.0, q).mean(kX) == 1.0);
  CHECK_THROWS_AS(ekf_predict(b, 0.0, q), DomainError);
}

TEST_CASE("motion model matches the arc construction") {
  Rng rng(1);
  for (int k = 0; k < 500; ++k) {
    const Vector5d s = state(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-kPi, kPi),
                             rng.uniform(-2, 2), k % 5 == 0 ? 0.0 : rng.uniform(-1, 1));
    const double dt = rng.uniform(0.01, 1.0);
    const Vector5d m = motion_model(s, dt);
    const Eigen::Vector3d o = arc_oracle(s, dt);
    CHECK(std::abs(m(kX) - o.x()) < 1e-9);
    CHECK(std::abs(m(kY) - o.y()) < 1e-9);
    CHECK(std::abs(wrap_angle(m(kTheta) - o.z())) < 1e-12);
    CHECK(m(kV) == s(kV));
    CHECK(m(kOmega) == s(kOmega));
  }
}

TEST_CASE("motion Jacobian matches finite differences") {
  Rng rng(2);
  const double h = 1e-6;
  for (int k = 0; k < 200; ++k) {
    const Vector5d s = state(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-3, 3), rng.uniform(-2, 2),
                             k % 4 == 0 ? 0.0 : rng.uniform(-1, 1));
    const double dt = rng.uniform(0.02, 0.5);
    const Matrix5d f = motion_jacobian(s, dt);
    for (int c = 0; c < 5; ++c) {
      Vector5d sp = s, sm = s;
      sp(c) += h;
      sm(c) -= h;
      Vector5d d = (motion_model(sp, dt) - motion_model(sm, dt));
      d(kTheta) = wrap_angle(d(kTheta));
      d /= 2 * h;
      // Near omega = 0 the model switches branches; the difference quotient
      // then straddles the two and is only accurate to O(dt^2 h).
      CHECK((f.col(c) - d).cwiseAbs().maxCoeff() < 1e-6);
    }
  }
}

TEST_CASE("gate thresholds are chi-square quantiles") {
  CHECK(gate_threshold(1) == doctest::Approx(6.634896601).epsilon(1e-8));
  CHECK(gate_threshold(2) == doctest::Approx(9.210340372).epsilon(1e-8));
  CHECK(gate_threshold(3) == doctest::Approx(11.34486673).epsilon(1e-8));
  CHECK(std::isinf(gate_threshold(3, 1.0)));
  CHECK_THROWS_AS(gate_threshold(0), DomainError);
}

TEST_CASE("update examples") {
  Rng rng(3);
  const Belief b = random_belief(rng);
  const auto z = Measurement::pose(b.pose(), Eigen::Matrix3d::Identity() * 0.01);
  const auto r = ekf_update(b, z);
  CHECK(r.accepted);
  CHECK((r.belief.mean - b.mean).norm() < 1e-12);
  CHECK(r.belief.cov.trace() <= b.cov.trace());
  CHECK(r.mahalanobis2 == doctest::Approx(0.0));

  // Vanishing noise pins the pose to the measurement.
  const Pose2 target{b.mean(kX) + 0.01, b.mean(kY) - 0.02, wrap_angle(b.mean(kTheta) + 0.01)};
  const auto exact = ekf_update(b, Measurement::pose(target, Eigen::Matrix3d::Identity() * 1e-12), 1.0);
  CHECK(std::abs(exact.belief.mean(kX) - target.x) < 1e-6);
  CHECK(std::abs(exact.belief.mean(kY) - target.y) < 1e-6);
  CHECK(std::abs(wrap_angle(exact.belief.mean(kTheta) - target.theta)) < 1e-6);

  // Scalar update against the textbook closed form.
  Belief s;
  s.mean = state(0, 0, 0, 0.5, 0.1);
  s.cov = Matrix5d::Identity() * 0.04;
  const auto u = ekf_update(s, Measurement::imu_yaw_rate(0.3, 0.01));
  const double gain = 0.04 / (0.04 + 0.01);
  CHECK(u.belief.mean(kOmega) == doctest::Approx(0.1 + gain * 0.2));
  CHECK(u.belief.cov(kOmega, kOmega) == doctest::Approx((1 - gain) * 0.04));
  CHECK(u.mahalanobis2 == doctest::Approx(0.2 * 0.2 / 0.05));
}

TEST_CASE("gated measurements leave the belief unchanged") {
  Rng rng(4);
  for (int k = 0; k < 100; ++k) {
    const Belief b = random_belief(rng);
    const Pose2 far{b.mean(kX) + 50.0, b.mean(kY), b.mean(kTheta)};
    const auto r = ekf_update(b, Measurement::pose(far, Eigen::Matrix3d::Identity() * 0.01));
    CHECK_FALSE(r.accepted);
    CHECK(r.mahalanobis2 > gate_threshold(3));
    CHECK(r.belief.mean == b.mean);
    CHECK(r.belief.cov == b.cov);
  }
}

TEST_CASE("singular innovation covariance") {
  Belief b;
  b.cov = Matrix5d::Zero();
  CHECK_THROWS_AS(ekf_update(b, Measurement::pose({}, Eigen::Matrix3d::Zero())), NumericalFailure);
  CHECK_THROWS_AS(ekf_update(b, Measurement::wheel_twist(0, 0, Eigen::Matrix2d::Zero())), NumericalFailure);
}

TEST_CASE("pose algebra and VO conversion") {
  Rng rng(5);
  for (int k = 0; k < 200; ++k) {
    const Pose2 a{rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-kPi, kPi)};
    const Pose2 d{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const Pose2 c = compose(a, d);
    const Pose2 back = between(a, c);
    CHECK(std::abs(back.x - d.x) < 1e-12);
    CHECK(std::abs(back.y - d.y) < 1e-12);
    CHECK(std::abs(wrap_angle(back.theta - d.theta)) < 1e-12);

    const Eigen::Matrix3d r = Eigen::Vector3d(0.04, 0.01, 0.001).asDiagonal();
    const auto m = vo_delta_to_pose_measurement(a, d, r);
    CHECK(std::abs(m.value(0) - c.x) < 1e-12);
    CHECK(std::abs(m.value(1) - c.y) < 1e-12);
    CHECK(m.noise.trace() == doctest::Approx(r.trace()));
    CHECK(m.noise(2, 2) == doctest::Approx(0.001));
    CHECK(is_spd(m.noise));
  }
}

TEST_CASE("noiseless odometry and VO track the true pose") {
  FilterConfig cfg;
  const Eigen::Matrix2d r_odo = Eigen::Matrix2d::Identity() * 1e-14;
  const Eigen::Matrix3d r_vo = Eigen::Matrix3d::Identity() * 1e-14;
  Rng rng(6);
  Vector5d truth = state(1.0, -2.0, 0.4, 0.0, 0.0);
  Belief b = cfg.initial_belief(Pose2{truth(0), truth(1), truth(2)});
  Pose2 anchor_true = b.pose(), anchor_est = b.pose();
  const double dt = 0.1;
  for (int k = 1; k <= 100; ++k) {
    if (k % 10 == 1) {
      truth(kV) = rng.uniform(-0.5, 0.8);
      truth(kOmega) = rng.uniform(-0.4, 0.4);
    }
    b = ekf_update(b, Measurement::wheel_twist(truth(kV), truth(kOmega), r_odo)).belief;
    b = ekf_update(b, Measurement::imu_yaw_rate(truth(kOmega), 1e-14)).belief;
    b = ekf_predict(b, dt, cfg.process_covariance(dt));
    truth = motion_model(truth, dt);
    if (k % 5 == 0) {
      const Pose2 now{truth(0), truth(1), truth(2)};
      const auto z = vo_delta_to_pose_measurement(anchor_est, between(anchor_true, now), r_vo);
      const auto u = ekf_update(b, z);
      CHECK(u.accepted);
      b = u.belief;
      anchor_true = now;
      anchor_est = b.pose();
    }
  }
  CHECK(std::hypot(b.mean(kX) - truth(kX), b.mean(kY) - truth(kY)) < 1e-6);
  CHECK(std::abs(wrap_angle(b.mean(kTheta) - truth(kTheta))) < 1e-6);
}

TEST_CASE("covariance stays SPD and theta stays wrapped") {
  FilterConfig cfg;
  Rng rng(7);
  Belief b = cfg.initial_belief({0.0, 0.0, 3.1});
  for (int k = 0; k < 10000; ++k) {
    switch (rng.below(4)) {
      case 0:
        b = ekf_update(b, Measurement::wheel_twist(rng.uniform(-1, 1), rng.uniform(-1, 1), cfg.odometry_noise)).belief;
        break;
      case 1:
        b = ekf_update(b, Measurement::imu_yaw_rate(rng.uniform(-1, 1), cfg.imu_noise)).belief;
        break;
      case 2: {
        const Pose2 p{b.mean(kX) + rng.normal(0, 0.05), b.mean(kY) + rng.normal(0, 0.05),
                      wrap_angle(b.mean(kTheta) + rng.normal(0, 0.05))};
        b = ekf_update(b, Measurement::pose(p, cfg.vo_noise)).belief;
        break;
      }
      default:
        b = ekf_predict(b, 0.05, cfg.process_covariance(0.05));
    }
    REQUIRE(is_spd(b.cov));
    REQUIRE(b.mean(kTheta) > -kPi);
    REQUIRE(b.mean(kTheta) <= kPi);
  }
}

TEST_CASE("filter configuration validation") {
  FilterConfig c;
  CHECK_NOTHROW(c.validate());
  c.process_noise(0) = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = FilterConfig{};
  c.vo_noise(0, 1) = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_FALSE(is_spd(Eigen::Matrix2d::Zero()));
  CHECK(is_spd(Eigen::Matrix2d::Identity()));
}
