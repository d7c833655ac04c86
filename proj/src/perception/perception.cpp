#include "lunar/perception.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <fmt/format.h>

namespace lunar::perception {

void StereoSpec::validate() const {
  if (!(focal > 0.0)) throw ConfigError("stereo focal length must be > 0");
  if (!(half_baseline > 0.0)) throw ConfigError("stereo half-baseline must be > 0");
  if (!(half_width > 0.0) || !(half_height > 0.0))
    throw ConfigError("stereo image bounds must be > 0");
  if (!(pixel_sigma >= 0.0)) throw ConfigError("stereo pixel noise must be >= 0");
}

PixelPair project(const Eigen::Vector3d& p, const StereoSpec& spec) {
  if (!(p.z() > 0.0)) throw DomainError("point is behind the camera (z <= 0)");
  const double f = spec.focal, d = spec.half_baseline;
  PixelPair out;
  out.u_left = f * (p.x() - d) / p.z();
  out.u_right = f * (p.x() + d) / p.z();
  out.v_left = f * p.y() / p.z();
  out.v_right = out.v_left;
  return out;
}

Eigen::Vector3d triangulate(const PixelPair& pair, const StereoSpec& spec) {
  const double disparity = pair.u_right - pair.u_left;
  if (!(disparity > 0.0)) throw DegenerateGeometry("non-positive stereo disparity");
  const double f = spec.focal, d = spec.half_baseline;
  const double z = 2.0 * d * f / disparity;
  const double x = (pair.u_left * z + d * f) / f;
  // The vertical coordinate inverts v = f*y/z; there is no baseline term on
  // the vertical axis of a horizontal stereo pair.
  const double y = pair.v_left * z / f;
  return {x, y, z};
}

Eigen::Vector3d camera_to_sensor(const Eigen::Vector3d& p) { return {p.z(), -p.x(), -p.y()}; }

Eigen::Vector3d sensor_to_camera(const Eigen::Vector3d& p) { return {-p.y(), -p.z(), p.x()}; }

Eigen::Isometry3d fit_rigid(const std::vector<Eigen::Vector3d>& src,
                            const std::vector<Eigen::Vector3d>& dst) {
  const std::size_t n = src.size();
  Eigen::Vector3d cs = Eigen::Vector3d::Zero(), cd = Eigen::Vector3d::Zero();
  for (std::size_t k = 0; k < n; ++k) {
    cs += src[k];
    cd += dst[k];
  }
  cs /= static_cast<double>(n);
  cd /= static_cast<double>(n);
  Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
  for (std::size_t k = 0; k < n; ++k) h += (src[k] - cs) * (dst[k] - cd).transpose();

  Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Matrix3d u = svd.matrixU(), v = svd.matrixV();
  Eigen::Matrix3d fix = Eigen::Matrix3d::Identity();
  fix(2, 2) = (v * u.transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  const Eigen::Matrix3d r = v * fix * u.transpose();

  Eigen::Isometry3d t = Eigen::Isometry3d::Identity();
  t.linear() = r;
  t.translation() = cd - r * cs;
  return t;
}

namespace {

bool collinear(const std::vector<Eigen::Vector3d>& pts) {
  if (pts.size() < 3) return true;
  Eigen::Vector3d c = Eigen::Vector3d::Zero();
  for (const auto& p : pts) c += p;
  c /= static_cast<double>(pts.size());
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const auto& p : pts) cov += (p - c) * (p - c).transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
  const Eigen::Vector3d ev = es.eigenvalues();  // ascending
  return ev(1) <= 1e-12 * std::max(ev(2), 1e-30);
}

}  // namespace

MotionEstimate estimate_motion(const std::vector<IdPoint>& points_prev,
                               const std::vector<IdPoint>& points_curr, const RansacConfig& cfg,
                               Rng& rng) {
  std::map<int, Eigen::Vector3d> prev_by_id;
  for (const auto& p : points_prev) prev_by_id[p.id] = p.p;
  std::vector<int> ids;
  std::vector<Eigen::Vector3d> prev, curr;
  std::map<int, Eigen::Vector3d> curr_by_id;
  for (const auto& p : points_curr) curr_by_id[p.id] = p.p;
  for (const auto& [id, pc] : curr_by_id) {
    auto it = prev_by_id.find(id);
    if (it == prev_by_id.end()) continue;
    ids.push_back(id);
    prev.push_back(it->second);
    curr.push_back(pc);
  }
  if (ids.size() < 3) {
    throw InsufficientFeatures(fmt::format("{} shared landmarks, need at least 3", ids.size()));
  }
  if (collinear(prev)) throw InsufficientFeatures("shared landmarks are collinear");

  const std::size_t n = ids.size();
  const auto sample_size = static_cast<std::size_t>(std::max(cfg.sample_size, 3));
  const double thr2 = cfg.inlier_threshold * cfg.inlier_threshold;

  // Motion maps current-frame coordinates into the previous frame.
  auto inliers_of = [&](const Eigen::Isometry3d& t, double& sum_sq) {
    std::vector<std::size_t> in;
    sum_sq = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double e2 = (t * curr[k] - prev[k]).squaredNorm();
      if (e2 <= thr2) {
        in.push_back(k);
        sum_sq += e2;
      }
    }
    return in;
  };
  auto fit_subset = [&](const std::vector<std::size_t>& idx) {
    std::vector<Eigen::Vector3d> s, d;
    for (auto k : idx) {
      s.push_back(curr[k]);
      d.push_back(prev[k]);
    }
    return fit_rigid(s, d);
  };

  std::vector<std::size_t> best_inliers;
  double best_sq = 0.0;
  for (int it = 0; it < cfg.iterations; ++it) {
    std::vector<std::size_t> sample;
    while (sample.size() < std::min(sample_size, n)) {
      const auto k = static_cast<std::size_t>(rng.below(n));
      if (std::find(sample.begin(), sample.end(), k) == sample.end()) sample.push_back(k);
    }
    std::vector<Eigen::Vector3d> sp;
    for (auto k : sample) sp.push_back(prev[k]);
    if (collinear(sp)) continue;
    double sq = 0.0;
    auto in = inliers_of(fit_subset(sample), sq);
    if (in.size() > best_inliers.size() || (in.size() == best_inliers.size() && sq < best_sq)) {
      best_inliers = std::move(in);
      best_sq = sq;
    }
  }
  if (best_inliers.size() < 3) throw InsufficientFeatures("no consensus set of 3 or more inliers");

  // Refit on the consensus set, then once more on the refreshed inliers.
  Eigen::Isometry3d t = fit_subset(best_inliers);
  double sq = 0.0;
  auto refreshed = inliers_of(t, sq);
  std::vector<Eigen::Vector3d> rp;
  for (auto k : refreshed) rp.push_back(prev[k]);
  if (refreshed.size() >= 3 && !collinear(rp)) {
    best_inliers = std::move(refreshed);
    t = fit_subset(best_inliers);
  }

  MotionEstimate out;
  out.motion = t;
  double acc = 0.0;
  for (auto k : best_inliers) {
    out.inlier_ids.push_back(ids[k]);
    acc += (t * curr[k] - prev[k]).squaredNorm();
  }
  out.rms_residual = std::sqrt(acc / static_cast<double>(best_inliers.size()));
  return out;
}

std::vector<IdPoint> triangulate_frame(const StereoFrame& frame, const StereoSpec& spec) {
  std::vector<IdPoint> out;
  out.reserve(frame.pairs.size());
  for (const auto& pair : frame.pairs) {
    if (!(pair.u_right - pair.u_left > 0.0)) continue;
    out.push_back({pair.landmark_id, triangulate(pair, spec)});
  }
  return out;
}

MotionEstimate visual_odometry(const StereoFrame& prev, const StereoFrame& curr,
                               const StereoSpec& spec, const RansacConfig& cfg, Rng& rng) {
  return estimate_motion(triangulate_frame(prev, spec), triangulate_frame(curr, spec), cfg, rng);
}

std::string to_string(ObjectClass c) {
  switch (c) {
    case ObjectClass::Cubesat: return "cubesat";
    case ObjectClass::Lander: return "lander";
    case ObjectClass::Rock: return "rock";
  }
  return "unknown";
}

namespace {

Eigen::Matrix3d yaw_rotation(double yaw) {
  return Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()).toRotationMatrix();
}

}  // namespace

std::vector<Detection> detect_objects(const world::World& world, const SensorPose& camera,
                                      const DetectorConfig& cfg, Rng& rng) {
  struct Target {
    ObjectClass label;
    Eigen::Vector3d position;
    double margin;
  };
  std::vector<Target> targets;
  targets.push_back({ObjectClass::Cubesat, world.cubesat_position, world::kCubesatHalfSize});
  const auto& home = world.home_base_pose;
  if (world.heightfield.contains(home.x, home.y)) {
    targets.push_back({ObjectClass::Lander,
                       {home.x, home.y, world.heightfield.height_at(home.x, home.y) +
                                            world::kHomeMarkerHeight},
                       0.05});
  }
  if (cfg.include_rocks) {
    for (const auto& r : world.rocks) {
      targets.push_back({ObjectClass::Rock, r.center + Eigen::Vector3d(0, 0, r.radius), 0.05});
    }
  }

  const Eigen::Matrix3d rt = yaw_rotation(camera.yaw).transpose();
  std::vector<Detection> out;
  for (const auto& target : targets) {
    const Eigen::Vector3d s = rt * (target.position - camera.position);
    const double range = s.norm();
    const double bearing = std::atan2(s.y(), s.x());
    const double elevation = std::atan2(s.z(), std::hypot(s.x(), s.y()));
    if (range > cfg.max_range || range <= 0.0 || std::abs(bearing) > 0.5 * cfg.fov) continue;
    if (!world::line_of_sight(world, camera.position, target.position, target.margin)) continue;

    // Fixed draw order per visible target: detection trial, then noise.
    const bool hit = rng.bernoulli(cfg.p_detect);
    const double nb = rng.normal(0.0, cfg.bearing_sigma);
    const double ne = rng.normal(0.0, cfg.elevation_sigma);
    const double nr = rng.normal(0.0, cfg.range_sigma_fraction * range);
    if (!hit) continue;
    Detection d;
    d.label = target.label;
    d.bearing = wrap_angle(bearing + nb);
    d.elevation = elevation + ne;
    d.range = std::max(range + nr, 1e-3);
    out.push_back(d);
  }
  return out;
}

Eigen::Vector3d detection_to_world(const PosedDetection& pd) {
  const auto& d = pd.detection;
  const Eigen::Vector3d s(d.range * std::cos(d.elevation) * std::cos(d.bearing),
                          d.range * std::cos(d.elevation) * std::sin(d.bearing),
                          d.range * std::sin(d.elevation));
  return pd.camera.position + yaw_rotation(pd.camera.yaw) * s;
}

namespace {

struct Linearization {
  Eigen::VectorXd residual;  // whitened
  Eigen::MatrixXd jacobian;  // of the whitened prediction
};

Linearization linearize(const std::vector<PosedDetection>& dets, const Eigen::Vector3d& x,
                        const DetectorConfig& noise) {
  const auto m = static_cast<Eigen::Index>(dets.size());
  Linearization lin{Eigen::VectorXd(3 * m), Eigen::MatrixXd(3 * m, 3)};
  for (Eigen::Index k = 0; k < m; ++k) {
    const auto& pd = dets[static_cast<std::size_t>(k)];
    const Eigen::Matrix3d rt = yaw_rotation(pd.camera.yaw).transpose();
    const Eigen::Vector3d s = rt * (x - pd.camera.position);
    const double rho2 = s.x() * s.x() + s.y() * s.y();
    const double rho = std::sqrt(rho2);
    const double n2 = rho2 + s.z() * s.z();
    const double n = std::sqrt(n2);
    if (rho < 1e-9 || n < 1e-9) throw EstimationFailure("estimate coincides with a camera", 0.0);

    const double sb = std::max(noise.bearing_sigma, 1e-9);
    const double se = std::max(noise.elevation_sigma, 1e-9);
    const double sr = std::max(noise.range_sigma_fraction * pd.detection.range, 1e-9);

    const double bearing = std::atan2(s.y(), s.x());
    const double elevation = std::atan2(s.z(), rho);
    lin.residual(3 * k) = wrap_angle(pd.detection.bearing - bearing) / sb;
    lin.residual(3 * k + 1) = (pd.detection.elevation - elevation) / se;
    lin.residual(3 * k + 2) = (pd.detection.range - n) / sr;

    const Eigen::RowVector3d db(-s.y() / rho2, s.x() / rho2, 0.0);
    const Eigen::RowVector3d de(-s.z() * s.x() / (rho * n2), -s.z() * s.y() / (rho * n2),
                                rho / n2);
    const Eigen::RowVector3d dr = s.transpose() / n;
    lin.jacobian.row(3 * k) = db * rt / sb;
    lin.jacobian.row(3 * k + 1) = de * rt / se;
    lin.jacobian.row(3 * k + 2) = dr * rt / sr;
  }
  return lin;
}

}  // namespace

ObjectEstimate estimate_object_position(const std::vector<PosedDetection>& detections,
                                        const DetectorConfig& noise) {
  if (detections.size() < 2) throw PreconditionError("need at least two detections");
  bool distinct = false;
  for (const auto& d : detections) {
    if ((d.camera.position - detections.front().camera.position).norm() > 1e-6) distinct = true;
  }
  if (!distinct) throw PreconditionError("detections must come from distinct camera poses");

  constexpr int kMaxIterations = 20;
  constexpr double kTolerance = 1e-9;

  ObjectEstimate est;
  Eigen::Vector3d x = detection_to_world(detections.front());
  Linearization lin = linearize(detections, x, noise);
  double cost = 0.5 * lin.residual.squaredNorm();
  est.cost_history.push_back(cost);

  bool converged = false;
  for (int it = 0; it < kMaxIterations && !converged; ++it) {
    est.iterations = it + 1;
    const Eigen::Matrix3d h = lin.jacobian.transpose() * lin.jacobian;
    const Eigen::Vector3d g = lin.jacobian.transpose() * lin.residual;
    Eigen::LDLT<Eigen::Matrix3d> ldlt(h);
    if (ldlt.info() != Eigen::Success || ldlt.rcond() < 1e-14)
      throw EstimationFailure("normal equations are singular", std::sqrt(2.0 * cost));
    Eigen::Vector3d step = ldlt.solve(g);

    // Halve the step until the cost does not increase.
    bool accepted = false;
    for (int ls = 0; ls < 30; ++ls) {
      const Eigen::Vector3d candidate = x + step;
      Linearization cand_lin;
      try {
        cand_lin = linearize(detections, candidate, noise);
      } catch (const EstimationFailure&) {
        step *= 0.5;
        continue;
      }
      const double cand_cost = 0.5 * cand_lin.residual.squaredNorm();
      if (cand_cost <= cost) {
        const double decrease = cost - cand_cost;
        x = candidate;
        lin = std::move(cand_lin);
        cost = cand_cost;
        est.cost_history.push_back(cost);
        accepted = true;
        if (step.norm() < kTolerance * (1.0 + x.norm()) || decrease <= 1e-15 * (1.0 + cost))
          converged = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) converged = step.norm() < 1e-6;  // at a minimum up to rounding
    if (!accepted && !converged) break;
  }
  if (!converged) {
    throw EstimationFailure(
        fmt::format("Gauss-Newton did not converge, residual {:.6g}", std::sqrt(2.0 * cost)),
        std::sqrt(2.0 * cost));
  }

  est.position = x;
  est.cost = cost;
  const Eigen::Matrix3d h = lin.jacobian.transpose() * lin.jacobian;
  est.covariance = h.inverse();
  return est;
}

}  // namespace lunar::perception
