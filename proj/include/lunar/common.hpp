#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Core>

namespace lunar {

// Error taxonomy shared by every module. Each failure class named by the
// operation contracts gets its own type so callers can route on it.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error { using Error::Error; };
class DomainError : public Error { using Error::Error; };
class InfeasibleCommand : public Error { using Error::Error; };
class UnreachableError : public Error { using Error::Error; };
class LimitInfeasibleError : public Error { using Error::Error; };
class PlanningFailure : public Error { using Error::Error; };
class DegenerateGeometry : public Error { using Error::Error; };
class InsufficientFeatures : public Error { using Error::Error; };
class NumericalFailure : public Error { using Error::Error; };
class InvalidEndpoint : public Error { using Error::Error; };
class PreconditionError : public Error { using Error::Error; };

class EstimationFailure : public Error {
 public:
  EstimationFailure(const std::string& what, double residual)
      : Error(what), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Wraps an angle into (-pi, pi].
inline double wrap_angle(double a) {
  a = std::fmod(a, kTwoPi);
  if (a <= -kPi) a += kTwoPi;
  if (a > kPi) a -= kTwoPi;
  return a;
}

struct Pose2 {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;

  Eigen::Vector2d xy() const { return {x, y}; }
};

/// 3-D sensor pose used by cameras and detectors: position plus yaw.
/// Sensors are carried level; terrain attitude is not propagated to them.
struct SensorPose {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  double yaw = 0.0;
};

// Rigid body-frame offset composed onto a planar pose.
inline Eigen::Vector2d body_to_world(const Pose2& pose, const Eigen::Vector2d& p) {
  const double c = std::cos(pose.theta), s = std::sin(pose.theta);
  return {pose.x + c * p.x() - s * p.y(), pose.y + s * p.x() + c * p.y()};
}

inline Eigen::Vector2d world_to_body(const Pose2& pose, const Eigen::Vector2d& p) {
  const double c = std::cos(pose.theta), s = std::sin(pose.theta);
  const double dx = p.x() - pose.x, dy = p.y() - pose.y;
  return {c * dx + s * dy, -s * dx + c * dy};
}

/// 64-bit FNV-1a, used for world and telemetry digests.
class Fnv1a {
 public:
  void update(std::string_view bytes) {
    for (unsigned char c : bytes) {
      hash_ ^= c;
      hash_ *= 0x100000001b3ULL;
    }
  }
  std::uint64_t value() const { return hash_; }
  std::string hex() const;

 private:
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

std::string digest_hex(std::string_view bytes);

/// Exact, platform-independent textual form of a double (hex float).
std::string exact_repr(double v);

}  // namespace lunar
