#include <doctest.h>

#include <cmath>

#include "lunar/rng.hpp"
#include "lunar/world.hpp"

using namespace lunar;
using namespace lunar::world;

namespace {

WorldConfig flat_config() {
  WorldConfig c;
  c.rock_count = 0;
  c.terrain_amplitude = 0.0;
  c.landmark_count = 0;
  return c;
}

}  // namespace

TEST_CASE("same config gives the same world") {
  WorldConfig c;
  c.seed = 42;
  c.deposits.push_back({"water_ice", 5.0, std::nullopt, 0.3});
  const World a = generate_world(c);
  const World b = generate_world(c);
  CHECK(serialize_world(a) == serialize_world(b));
  CHECK(world_digest(a) == world_digest(b));
  c.seed = 43;
  CHECK(world_digest(generate_world(c)) != world_digest(a));
}

TEST_CASE("flat degenerate world") {
  const World w = generate_world(flat_config());
  CHECK(w.rocks.empty());
  CHECK(w.gravity == doctest::Approx(1.62));
  for (double x = -9.5; x <= 9.5; x += 1.37)
    for (double y = -9.5; y <= 9.5; y += 0.91) CHECK(height_at(w, x, y) == 0.0);
}

TEST_CASE("height is exact at nodes and bilinear inside a cell") {
  Heightfield hf({0.0, 0.0}, 1.0, 2, 2);
  hf.node(1, 1) = 1.0;
  CHECK(hf.height_at(0.5, 0.5) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(hf.height_at(1.0, 1.0) == 1.0);
  CHECK(hf.height_at(0.0, 0.0) == 0.0);
  // Hand-evaluated bilinear form u*v on this cell.
  CHECK(hf.height_at(0.2, 0.7) == doctest::Approx(0.14).epsilon(1e-14));
  CHECK_THROWS_AS(hf.height_at(1.5, 0.5), DomainError);
  CHECK_THROWS_AS(hf.height_at(-0.1, 0.5), DomainError);
}

TEST_CASE("height is continuous across cell edges") {
  WorldConfig c;
  c.seed = 9;
  const World w = generate_world(c);
  const auto& hf = w.heightfield;
  for (int i = 1; i < hf.nx() - 1; i += 3) {
    const double xe = hf.min_x() + i * hf.cell_size();
    for (double y = hf.min_y() + 0.13; y < hf.max_y(); y += 1.1) {
      const double left = hf.height_at(std::nextafter(xe, -1e9), y);
      const double right = hf.height_at(xe, y);
      CHECK(std::abs(left - right) < 1e-12);
    }
  }
}

TEST_CASE("raycast examples") {
  World w = generate_world(flat_config());
  CHECK_FALSE(raycast(w, {0, 0, 1}, {1, 0, 0}, 8.0).has_value());
  const auto down = raycast(w, {1.0, 2.0, 2.0}, {0, 0, -1}, 10.0);
  REQUIRE(down);
  CHECK(down->range == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(down->kind == SurfaceKind::Terrain);

  w.rocks.push_back({{5.0, 0.0, 1.0}, 0.5});
  const auto hit = raycast(w, {0, 0, 1}, {1, 0, 0}, 20.0);
  REQUIRE(hit);
  CHECK(hit->range == doctest::Approx(4.5).epsilon(1e-12));
  CHECK(hit->kind == SurfaceKind::Rock);
  CHECK(hit->rock_index == 0);
  CHECK_FALSE(raycast(w, {0, 0, 1}, {1, 0, 0}, 4.4).has_value());
  CHECK_THROWS_AS(raycast(w, {0, 0, 1}, {2, 0, 0}, 5.0), DomainError);
  CHECK_THROWS_AS(raycast(w, {0, 0, 1}, {1, 0, 0}, 0.0), DomainError);
}

TEST_CASE("raycast is monotone in max_range") {
  WorldConfig c;
  c.seed = 3;
  c.rock_count = 40;
  const World w = generate_world(c);
  Rng rng(17);
  for (int k = 0; k < 300; ++k) {
    const Eigen::Vector3d o(rng.uniform(-8, 8), rng.uniform(-8, 8), 1.0);
    const double a = rng.uniform(-kPi, kPi), e = rng.uniform(-0.3, 0.05);
    const Eigen::Vector3d d(std::cos(e) * std::cos(a), std::cos(e) * std::sin(a), std::sin(e));
    const auto full = raycast(w, o, d, 20.0);
    const double shorter = rng.uniform(0.5, 20.0);
    const auto part = raycast(w, o, d, shorter);
    if (part) {
      REQUIRE(full);
      CHECK(part->range == doctest::Approx(full->range));
    } else if (full) {
      CHECK(full->range > shorter - 1e-9);
    }
  }
}

TEST_CASE("sense_volatiles filters by horizontal distance") {
  WorldConfig c = flat_config();
  c.deposits.push_back({"water_ice", 1.0, Eigen::Vector2d(1.0, 0.0), 0.3});
  c.deposits.push_back({"methane", 1.0, Eigen::Vector2d(0.0, 3.0), 0.3});
  World w = generate_world(c);
  const auto r = sense_volatiles(w, {0.0, 0.0}, 2.0);
  REQUIRE(r.size() == 1);
  CHECK(r[0].deposit_id == w.deposits[0].id);
  CHECK(r[0].type_label == "water_ice");
  CHECK(r[0].range == doctest::Approx(1.0));
  CHECK(sense_volatiles(w, {-8.0, -8.0}, 2.0).empty());
  const auto below = sense_volatiles(w, {1.0, 0.0}, 0.5);
  REQUIRE(below.size() == 1);
  CHECK(below[0].range == 0.0);
  w.deposits[0].remaining_mass = 0.0;
  CHECK(sense_volatiles(w, {1.0, 0.0}, 0.5).empty());
}

TEST_CASE("50 rocks stay inside a 20 m box") {
  WorldConfig c;
  c.rock_count = 50;
  c.box_extent = {20.0, 20.0};
  const World w = generate_world(c);
  REQUIRE(w.rocks.size() == 50);
  for (const auto& r : w.rocks) {
    CHECK(std::abs(r.center.x()) <= 10.0);
    CHECK(std::abs(r.center.y()) <= 10.0);
  }
}

TEST_CASE("generated worlds respect bounds for 1000 seeds") {
  WorldConfig c;
  c.rock_count = 25;
  c.landmark_count = 0;
  c.rock_radius_min = 0.15;
  c.rock_radius_max = 0.6;
  c.deposits.push_back({"water_ice", 4.0, std::nullopt, 0.3});
  c.deposits.push_back({"ammonia", 2.0, std::nullopt, 0.5});
  for (std::uint64_t seed = 1; seed <= 1000; ++seed) {
    c.seed = seed;
    const World w = generate_world(c);
    for (const auto& r : w.rocks) {
      REQUIRE(r.radius >= 0.15);
      REQUIRE(r.radius <= 0.6);
      REQUIRE(std::abs(r.center.x()) <= 10.0);
      REQUIRE(std::abs(r.center.y()) <= 10.0);
    }
    for (const auto& d : w.deposits) {
      REQUIRE(d.position.z() < height_at(w, d.position.x(), d.position.y()));
      REQUIRE(d.remaining_mass == d.total_mass);
      for (const auto& r : w.rocks)
        REQUIRE((d.position.head<2>() - r.center.head<2>()).norm() > r.radius);
    }
  }
}

TEST_CASE("invalid configurations are rejected") {
  WorldConfig c;
  c.cell_size = 0.0;
  CHECK_THROWS_AS(generate_world(c), ConfigError);
  c = WorldConfig{};
  c.rock_radius_min = 0.6;
  c.rock_radius_max = 0.2;
  CHECK_THROWS_AS(generate_world(c), ConfigError);
  c = WorldConfig{};
  c.rock_count = -1;
  CHECK_THROWS_AS(generate_world(c), ConfigError);
  c = WorldConfig{};
  c.deposits.push_back({"x", 0.0, std::nullopt, 0.3});
  CHECK_THROWS_AS(generate_world(c), ConfigError);
  c = WorldConfig{};
  c.box_extent = {100.0, 100.0};
  CHECK_THROWS_AS(generate_world(c), ConfigError);
}

TEST_CASE("line of sight is blocked by a rock") {
  World w = generate_world(flat_config());
  CHECK(line_of_sight(w, {0, 0, 1}, {8, 0, 1}));
  w.rocks.push_back({{4.0, 0.0, 1.0}, 0.5});
  CHECK_FALSE(line_of_sight(w, {0, 0, 1}, {8, 0, 1}));
  CHECK(line_of_sight(w, {0, 2, 1}, {8, 2, 1}));
}
