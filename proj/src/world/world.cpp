#include "lunar/world.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <fmt/format.h>

#include "lunar/rng.hpp"

namespace lunar::world {

void WorldConfig::validate() const {
  if (!(cell_size > 0.0)) throw ConfigError("cell_size must be > 0");
  if (grid_nx < 2 || grid_ny < 2) throw ConfigError("grid_dims must be at least 2x2 nodes");
  if (rock_count < 0) throw ConfigError("rock_count must be >= 0");
  if (!(rock_radius_min > 0.0) || !(rock_radius_max > 0.0))
    throw ConfigError("rock_radius_range bounds must be > 0");
  if (rock_radius_min > rock_radius_max)
    throw ConfigError("rock_radius_range requires min <= max");
  if (!(terrain_amplitude >= 0.0)) throw ConfigError("terrain_amplitude must be >= 0");
  if (!(box_extent.x() >= 0.0) || !(box_extent.y() >= 0.0))
    throw ConfigError("box_extent must be non-negative");
  const double half_w = 0.5 * (grid_nx - 1) * cell_size;
  const double half_h = 0.5 * (grid_ny - 1) * cell_size;
  if (0.5 * box_extent.x() > half_w || 0.5 * box_extent.y() > half_h)
    throw ConfigError("box_extent must lie within terrain bounds");
  for (const auto& d : deposits) {
    if (!(d.mass > 0.0)) throw ConfigError("deposit mass must be > 0");
    if (!(d.depth > 0.0)) throw ConfigError("deposit depth must be > 0");
    if (d.position && (std::abs(d.position->x()) > half_w || std::abs(d.position->y()) > half_h))
      throw ConfigError("deposit position outside terrain bounds");
  }
  if (std::abs(home_base_pose.x) > half_w || std::abs(home_base_pose.y) > half_h)
    throw ConfigError("home_base_pose outside terrain bounds");
  if (cubesat_position &&
      (std::abs(cubesat_position->x()) > half_w || std::abs(cubesat_position->y()) > half_h))
    throw ConfigError("cubesat_position outside terrain bounds");
  if (terrain_features < 0 || landmark_count < 0)
    throw ConfigError("feature counts must be >= 0");
}

Heightfield::Heightfield(Eigen::Vector2d origin, double cell_size, int nx, int ny)
    : origin_(origin),
      cell_size_(cell_size),
      nx_(nx),
      ny_(ny),
      elevations_(static_cast<std::size_t>(nx) * ny, 0.0) {}

bool Heightfield::contains(double x, double y) const {
  return x >= min_x() && x <= max_x() && y >= min_y() && y <= max_y();
}

void Heightfield::locate(double x, double y, int& i, int& j, double& u, double& v) const {
  const double fx = (x - origin_.x()) / cell_size_;
  const double fy = (y - origin_.y()) / cell_size_;
  i = std::clamp(static_cast<int>(std::floor(fx)), 0, nx_ - 2);
  j = std::clamp(static_cast<int>(std::floor(fy)), 0, ny_ - 2);
  u = fx - i;
  v = fy - j;
}

double Heightfield::height_at(double x, double y) const {
  if (!contains(x, y))
    throw DomainError(fmt::format("height query ({}, {}) outside terrain bounds", x, y));
  int i, j;
  double u, v;
  locate(x, y, i, j, u, v);
  const double h00 = node(i, j), h10 = node(i + 1, j);
  const double h01 = node(i, j + 1), h11 = node(i + 1, j + 1);
  return h00 * (1.0 - u) * (1.0 - v) + h10 * u * (1.0 - v) + h01 * (1.0 - u) * v + h11 * u * v;
}

Eigen::Vector2d Heightfield::gradient_at(double x, double y) const {
  if (!contains(x, y))
    throw DomainError(fmt::format("gradient query ({}, {}) outside terrain bounds", x, y));
  int i, j;
  double u, v;
  locate(x, y, i, j, u, v);
  const double h00 = node(i, j), h10 = node(i + 1, j);
  const double h01 = node(i, j + 1), h11 = node(i + 1, j + 1);
  const double dhdu = (h10 - h00) * (1.0 - v) + (h11 - h01) * v;
  const double dhdv = (h01 - h00) * (1.0 - u) + (h11 - h10) * u;
  return {dhdu / cell_size_, dhdv / cell_size_};
}

namespace {

struct TerrainFeature {
  Eigen::Vector2d center;
  double radius;
  double amplitude;  // signed: bumps > 0, craters < 0
};

double feature_profile(const TerrainFeature& f, const Eigen::Vector2d& p) {
  const double d = (p - f.center).norm();
  if (d >= f.radius) return 0.0;
  return 0.5 * f.amplitude * (1.0 + std::cos(kPi * d / f.radius));
}

Heightfield synthesize_terrain(const WorldConfig& cfg, Rng& rng) {
  const Eigen::Vector2d origin(-0.5 * (cfg.grid_nx - 1) * cfg.cell_size,
                               -0.5 * (cfg.grid_ny - 1) * cfg.cell_size);
  Heightfield hf(origin, cfg.cell_size, cfg.grid_nx, cfg.grid_ny);

  std::vector<TerrainFeature> features;
  features.reserve(static_cast<std::size_t>(cfg.terrain_features));
  for (int k = 0; k < cfg.terrain_features; ++k) {
    TerrainFeature f;
    f.center = {rng.uniform(hf.min_x(), hf.max_x()), rng.uniform(hf.min_y(), hf.max_y())};
    f.radius = rng.uniform(3.0, 8.0);
    const double magnitude = rng.uniform(0.5, 1.0) * cfg.terrain_amplitude;
    f.amplitude = rng.bernoulli(0.6) ? magnitude : -magnitude;
    features.push_back(f);
  }

  for (int j = 0; j < hf.ny(); ++j) {
    for (int i = 0; i < hf.nx(); ++i) {
      const Eigen::Vector2d p(origin.x() + i * cfg.cell_size, origin.y() + j * cfg.cell_size);
      double h = 0.0;
      for (const auto& f : features) h += feature_profile(f, p);
      hf.node(i, j) = h;
    }
  }
  return hf;
}

bool clear_of_rocks(const std::vector<Rock>& rocks, const Eigen::Vector2d& p, double margin) {
  for (const auto& r : rocks) {
    if ((r.center.head<2>() - p).norm() <= r.radius + margin) return false;
  }
  return true;
}

constexpr int kMaxPlacementAttempts = 10000;

}  // namespace

World generate_world(const WorldConfig& config) {
  config.validate();

  World world;
  world.config = config;
  world.home_base_pose = config.home_base_pose;

  // Terrain and ground features use their own stream so that the primary
  // draw order (rocks, deposits, CubeSat) is independent of terrain settings.
  Rng terrain_rng = Rng::stream(config.seed, "terrain");
  world.heightfield = synthesize_terrain(config, terrain_rng);
  const Heightfield& hf = world.heightfield;

  Rng rng = Rng::stream(config.seed, "placement");
  const Eigen::Vector2d half_box = 0.5 * config.box_extent;
  const Eigen::Vector2d home = config.home_base_pose.xy();

  for (int k = 0; k < config.rock_count; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxPlacementAttempts && !placed; ++attempt) {
      const Eigen::Vector2d p(rng.uniform(-half_box.x(), half_box.x()),
                              rng.uniform(-half_box.y(), half_box.y()));
      const double radius = rng.uniform(config.rock_radius_min, config.rock_radius_max);
      if ((p - home).norm() <= config.home_clear_radius + radius) continue;
      if (!clear_of_rocks(world.rocks, p, radius)) continue;
      bool blocks_fixed = false;
      for (const auto& d : config.deposits) {
        if (d.position && (*d.position - p).norm() <= radius + 0.5) blocks_fixed = true;
      }
      if (config.cubesat_position &&
          (config.cubesat_position->head<2>() - p).norm() <= radius + 0.5)
        blocks_fixed = true;
      if (blocks_fixed) continue;
      world.rocks.push_back(Rock{{p.x(), p.y(), hf.height_at(p.x(), p.y())}, radius});
      placed = true;
    }
    if (!placed) throw ConfigError("rock box too dense to place rock_count rocks");
  }

  int next_id = 0;
  for (const auto& spec : config.deposits) {
    Eigen::Vector2d p;
    if (spec.position) {
      p = *spec.position;
      if (!clear_of_rocks(world.rocks, p, 0.0))
        throw ConfigError("deposit position lies under a rock footprint");
    } else {
      bool placed = false;
      for (int attempt = 0; attempt < kMaxPlacementAttempts && !placed; ++attempt) {
        p = {rng.uniform(-half_box.x(), half_box.x()), rng.uniform(-half_box.y(), half_box.y())};
        placed = clear_of_rocks(world.rocks, p, 0.3);
      }
      if (!placed) throw ConfigError("no rock-free location for a random deposit");
    }
    VolatileDeposit d;
    d.id = next_id++;
    d.type_label = spec.type_label;
    d.position = {p.x(), p.y(), hf.height_at(p.x(), p.y()) - spec.depth};
    d.total_mass = spec.mass;
    d.remaining_mass = spec.mass;
    world.deposits.push_back(d);
  }

  if (config.cubesat_position) {
    world.cubesat_position = *config.cubesat_position;
    // A non-finite height means "resting on the terrain".
    if (!std::isfinite(world.cubesat_position.z()))
      world.cubesat_position.z() =
          hf.height_at(world.cubesat_position.x(), world.cubesat_position.y()) + kCubesatHalfSize;
  } else {
    bool placed = false;
    Eigen::Vector2d p;
    for (int attempt = 0; attempt < kMaxPlacementAttempts && !placed; ++attempt) {
      p = {rng.uniform(-half_box.x(), half_box.x()), rng.uniform(-half_box.y(), half_box.y())};
      placed = clear_of_rocks(world.rocks, p, 0.5) && (p - home).norm() > config.home_clear_radius;
    }
    if (!placed) throw ConfigError("no rock-free location for the CubeSat");
    world.cubesat_position = {p.x(), p.y(), hf.height_at(p.x(), p.y()) + kCubesatHalfSize};
  }

  world.ground_features.reserve(static_cast<std::size_t>(config.landmark_count));
  for (int k = 0; k < config.landmark_count; ++k) {
    const double x = terrain_rng.uniform(hf.min_x(), hf.max_x());
    const double y = terrain_rng.uniform(hf.min_y(), hf.max_y());
    world.ground_features.push_back(Landmark{kGroundLandmarkBase + k, {x, y, hf.height_at(x, y)}});
  }
  return world;
}

double height_at(const World& world, double x, double y) {
  return world.heightfield.height_at(x, y);
}

namespace {

// Smallest root of a t^2 + b t + c in [lo, hi], if any.
std::optional<double> first_root(double a, double b, double c, double lo, double hi) {
  constexpr double kEps = 1e-12;
  std::optional<double> best;
  auto consider = [&](double t) {
    if (t >= lo - kEps && t <= hi + kEps && (!best || t < *best)) best = std::max(t, lo);
  };
  if (std::abs(a) < 1e-14) {
    if (std::abs(b) < 1e-300) return std::nullopt;
    consider(-c / b);
    return best;
  }
  const double disc = b * b - 4.0 * a * c;
  if (disc < 0.0) return std::nullopt;
  const double sq = std::sqrt(disc);
  const double q = -0.5 * (b + (b >= 0.0 ? sq : -sq));
  if (q != 0.0) {
    consider(q / a);
    consider(c / q);
  } else {
    consider(0.0);
  }
  return best;
}

// Terrain intersection by walking the cells the ray crosses. Inside a cell
// the bilinear surface restricted to the ray is quadratic in t, so each
// cell is solved exactly.
std::optional<double> raycast_terrain(const Heightfield& hf, const Eigen::Vector3d& o,
                                      const Eigen::Vector3d& d, double max_range) {
  double t0 = 0.0, t1 = max_range;
  const double lo[2] = {hf.min_x(), hf.min_y()};
  const double hi[2] = {hf.max_x(), hf.max_y()};
  for (int k = 0; k < 2; ++k) {
    if (std::abs(d[k]) < 1e-15) {
      if (o[k] < lo[k] || o[k] > hi[k]) return std::nullopt;
      continue;
    }
    double ta = (lo[k] - o[k]) / d[k];
    double tb = (hi[k] - o[k]) / d[k];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (t0 > t1) return std::nullopt;

  const double cs = hf.cell_size();
  const Eigen::Vector3d entry = o + t0 * d;
  int i = std::clamp(static_cast<int>(std::floor((entry.x() - hf.min_x()) / cs)), 0, hf.nx() - 2);
  int j = std::clamp(static_cast<int>(std::floor((entry.y() - hf.min_y()) / cs)), 0, hf.ny() - 2);

  const int step_i = d.x() > 0 ? 1 : -1;
  const int step_j = d.y() > 0 ? 1 : -1;
  const double inf = std::numeric_limits<double>::infinity();
  auto next_boundary = [&](int idx, int step, double origin, double dir, double base) {
    if (std::abs(dir) < 1e-15) return inf;
    const double edge = base + (idx + (step > 0 ? 1 : 0)) * cs;
    return (edge - origin) / dir;
  };

  double t = t0;
  while (t <= t1) {
    const double tx = next_boundary(i, step_i, o.x(), d.x(), hf.min_x());
    const double ty = next_boundary(j, step_j, o.y(), d.y(), hf.min_y());
    const double t_exit = std::min({tx, ty, t1});

    const double xi = hf.min_x() + i * cs, yj = hf.min_y() + j * cs;
    const double h00 = hf.node(i, j), h10 = hf.node(i + 1, j);
    const double h01 = hf.node(i, j + 1), h11 = hf.node(i + 1, j + 1);
    const double A = h10 - h00, B = h01 - h00, C = h00 - h10 - h01 + h11;
    const double u0 = (o.x() - xi) / cs, v0 = (o.y() - yj) / cs;
    const double au = d.x() / cs, av = d.y() / cs;
    const double k0 = h00 + A * u0 + B * v0 + C * u0 * v0;
    const double k1 = A * au + B * av + C * (u0 * av + v0 * au);
    const double k2 = C * au * av;
    // f(t) = ray z - surface z
    const double fa = -k2, fb = d.z() - k1, fc = o.z() - k0;
    const double f_entry = fc + fb * t + fa * t * t;
    if (f_entry <= 0.0) return t;
    if (auto root = first_root(fa, fb, fc, t, t_exit)) return *root;

    if (t_exit >= t1) break;
    if (tx <= ty) {
      i += step_i;
      if (i < 0 || i > hf.nx() - 2) break;
    } else {
      j += step_j;
      if (j < 0 || j > hf.ny() - 2) break;
    }
    t = t_exit;
  }
  return std::nullopt;
}

std::optional<double> raycast_sphere(const Eigen::Vector3d& o, const Eigen::Vector3d& d,
                                     const Eigen::Vector3d& c, double r) {
  const Eigen::Vector3d oc = o - c;
  const double b = d.dot(oc);
  const double cc = oc.squaredNorm() - r * r;
  if (cc <= 0.0) return 0.0;
  const double disc = b * b - cc;
  if (disc < 0.0) return std::nullopt;
  const double t = -b - std::sqrt(disc);
  if (t < 0.0) return std::nullopt;
  return t;
}

}  // namespace

std::optional<RayHit> raycast(const World& world, const Eigen::Vector3d& origin,
                              const Eigen::Vector3d& direction, double max_range) {
  if (std::abs(direction.norm() - 1.0) > 1e-9)
    throw DomainError("raycast direction must be a unit vector");
  if (!(max_range > 0.0)) throw DomainError("raycast max_range must be > 0");

  std::optional<RayHit> best;
  if (auto t = raycast_terrain(world.heightfield, origin, direction, max_range)) {
    best = RayHit{*t, SurfaceKind::Terrain, -1};
  }
  for (std::size_t k = 0; k < world.rocks.size(); ++k) {
    const auto& rock = world.rocks[k];
    auto t = raycast_sphere(origin, direction, rock.center, rock.radius);
    if (t && *t <= max_range && (!best || *t < best->range)) {
      best = RayHit{*t, SurfaceKind::Rock, static_cast<int>(k)};
    }
  }
  return best;
}

bool line_of_sight(const World& world, const Eigen::Vector3d& a, const Eigen::Vector3d& b,
                   double margin) {
  const Eigen::Vector3d delta = b - a;
  const double dist = delta.norm();
  if (dist <= margin) return true;
  return !raycast(world, a, delta / dist, dist - margin).has_value();
}

std::vector<VolatileReading> sense_volatiles(const World& world, const Eigen::Vector2d& position,
                                             double radius) {
  std::vector<VolatileReading> out;
  for (const auto& d : world.deposits) {
    if (d.remaining_mass <= 0.0) continue;
    const double range = (d.position.head<2>() - position).norm();
    if (range <= radius) out.push_back({d.id, d.type_label, range});
  }
  return out;
}

std::string serialize_world(const World& world) {
  std::ostringstream os;
  const auto& hf = world.heightfield;
  os << "gravity " << exact_repr(world.gravity) << '\n';
  os << "terrain " << hf.nx() << ' ' << hf.ny() << ' ' << exact_repr(hf.cell_size()) << ' '
     << exact_repr(hf.origin().x()) << ' ' << exact_repr(hf.origin().y()) << '\n';
  for (double h : hf.elevations()) os << exact_repr(h) << '\n';
  os << "rocks " << world.rocks.size() << '\n';
  for (const auto& r : world.rocks) {
    os << exact_repr(r.center.x()) << ' ' << exact_repr(r.center.y()) << ' '
       << exact_repr(r.center.z()) << ' ' << exact_repr(r.radius) << '\n';
  }
  os << "deposits " << world.deposits.size() << '\n';
  for (const auto& d : world.deposits) {
    os << d.id << ' ' << d.type_label << ' ' << exact_repr(d.position.x()) << ' '
       << exact_repr(d.position.y()) << ' ' << exact_repr(d.position.z()) << ' '
       << exact_repr(d.total_mass) << ' ' << exact_repr(d.remaining_mass) << '\n';
  }
  os << "features " << world.ground_features.size() << '\n';
  for (const auto& f : world.ground_features) {
    os << f.id << ' ' << exact_repr(f.position.x()) << ' ' << exact_repr(f.position.y()) << ' '
       << exact_repr(f.position.z()) << '\n';
  }
  os << "home " << exact_repr(world.home_base_pose.x) << ' ' << exact_repr(world.home_base_pose.y)
     << ' ' << exact_repr(world.home_base_pose.theta) << '\n';
  os << "cubesat " << exact_repr(world.cubesat_position.x()) << ' '
     << exact_repr(world.cubesat_position.y()) << ' ' << exact_repr(world.cubesat_position.z())
     << '\n';
  return os.str();
}

std::string world_digest(const World& world) { return digest_hex(serialize_world(world)); }

}  // namespace lunar::world
