#include <doctest.h>

#include <cmath>
#include <set>

#include "lunar/mapping.hpp"
#include "lunar/rng.hpp"

using namespace lunar;
using namespace lunar::mapping;

namespace {

OccupancyGrid blank() { return OccupancyGrid({-10.0, -10.0}, 0.25, 80, 80); }

vehicle::LidarScan single_beam(double angle, double range, double max_range = 20.0) {
  vehicle::LidarScan s;
  s.start_angle = angle;
  s.angular_step = 0.0;
  s.max_range = max_range;
  s.ranges = {range};
  return s;
}

// Brute-force distance to the nearest listed cell, in metres.
double nearest(const std::vector<CellIndex>& cells, int ix, int iy, double res) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& c : cells) best = std::min(best, std::hypot(ix - c.ix, iy - c.iy) * res);
  return best;
}

}  // namespace

TEST_CASE("a beam hits one cell and clears the rest") {
  SensorModel m;
  auto g = blank();
  const Pose2 sensor{0.125, 0.125, 0.0};
  integrate_scan(g, sensor, single_beam(0.0, 5.0), m);
  // The beam runs along row 40 from column 40 to column 60.
  for (int ix = 0; ix < g.nx(); ++ix)
    for (int iy = 0; iy < g.ny(); ++iy) {
      double expect = 0.0;
      if (iy == 40 && ix >= 40 && ix < 60) expect = m.l_miss;
      if (iy == 40 && ix == 60) expect = m.l_hit;
      CHECK(g.log_odds(ix, iy) == doctest::Approx(expect));
    }
  CHECK(g.observed(50, 40));
  CHECK_FALSE(g.observed(50, 41));
}

TEST_CASE("no-return beams clear up to max range") {
  SensorModel m;
  auto g = blank();
  integrate_scan(g, {0.125, 0.125, kPi / 2}, single_beam(0.0, vehicle::kNoReturn, 3.0), m);
  for (int iy = 40; iy <= 52; ++iy) CHECK(g.log_odds(40, iy) == doctest::Approx(m.l_miss));
  CHECK(g.log_odds(40, 53) == 0.0);
}

TEST_CASE("repeated hits saturate and hit plus miss cancels") {
  SensorModel m;
  auto g = blank();
  for (int k = 0; k < 20; ++k) integrate_ray(g, {0.125, 0.125}, {2.125, 0.125}, true, m);
  CHECK(g.log_odds(48, 40) == m.l_max);
  CHECK(g.log_odds(45, 40) == m.l_min);

  SensorModel sym;
  sym.l_hit = 0.4;
  sym.l_miss = -0.4;
  auto h = blank();
  integrate_ray(h, {0.125, 0.125}, {2.125, 0.125}, true, sym);
  integrate_ray(h, {0.125, 0.125}, {4.125, 0.125}, false, sym);
  CHECK(h.log_odds(48, 40) == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("log odds stay clamped under random updates") {
  SensorModel m;
  auto g = blank();
  Rng rng(3);
  for (int k = 0; k < 2000; ++k) {
    const Eigen::Vector2d a(rng.uniform(-9, 9), rng.uniform(-9, 9));
    const Eigen::Vector2d b(rng.uniform(-9, 9), rng.uniform(-9, 9));
    integrate_ray(g, a, b, rng.bernoulli(0.5), m);
  }
  for (double v : g.data()) {
    CHECK(v >= m.l_min);
    CHECK(v <= m.l_max);
  }
}

TEST_CASE("disjoint beams commute") {
  SensorModel m;
  Rng rng(4);
  std::vector<std::pair<Eigen::Vector2d, Eigen::Vector2d>> beams;
  for (int k = 0; k < 12; ++k) {
    const double y = -9.0 + 1.5 * k + 0.1;
    beams.push_back({{-8.0, y}, {rng.uniform(-2, 8), y}});
  }
  auto a = blank(), b = blank();
  for (const auto& [s, e] : beams) integrate_ray(a, s, e, true, m);
  for (auto it = beams.rbegin(); it != beams.rend(); ++it) integrate_ray(b, it->first, it->second, true, m);
  CHECK(a.data() == b.data());
}

TEST_CASE("traversal visits a connected chain of cells") {
  const GridGeometry geo({0.0, 0.0}, 1.0, 10, 10);
  Rng rng(5);
  for (int k = 0; k < 300; ++k) {
    const Eigen::Vector2d a(rng.uniform(0, 10), rng.uniform(0, 10)), b(rng.uniform(0, 10), rng.uniform(0, 10));
    const auto cells = traverse(geo, a, b);
    REQUIRE_FALSE(cells.empty());
    CHECK(cells.front() == *geo.cell_of(a));
    CHECK(cells.back() == *geo.cell_of(b));
    for (std::size_t i = 1; i < cells.size(); ++i)
      CHECK(std::abs(cells[i].ix - cells[i - 1].ix) + std::abs(cells[i].iy - cells[i - 1].iy) == 1);
  }
}

TEST_CASE("stereo points above ground mark hits") {
  SensorModel m;
  auto g = blank();
  const Pose2 sensor{0.125, 0.125, 0.0};
  integrate_points(g, sensor, 0.8, {{3.0, 0.0, -0.8}}, m);
  for (double v : g.data()) CHECK(v == 0.0);
  integrate_points(g, sensor, 0.8, {{3.0, 0.0, -0.3}}, m);
  CHECK(g.log_odds(52, 40) == doctest::Approx(m.l_hit));
  for (int k = 0; k < 10; ++k) integrate_points(g, sensor, 0.8, {{3.0, 0.0, -0.3}}, m);
  CHECK(g.log_odds(52, 40) == m.l_max);
}

TEST_CASE("inflation examples") {
  SensorModel m;
  InflationConfig cfg;
  cfg.robot_radius = 0.5;  // two cells
  cfg.decay = 0.0;
  const auto empty = inflate(blank(), m, cfg);
  for (auto c : empty.data()) CHECK(c == kFreeCost);

  auto g = blank();
  g.set_log_odds(40, 40, m.l_max);
  const auto cm = inflate(g, m, cfg);
  int heavy = 0;
  for (auto c : cm.data()) heavy += c >= kInscribedCost;
  int disk = 0;  // lattice points within radius two
  for (int dx = -3; dx <= 3; ++dx)
    for (int dy = -3; dy <= 3; ++dy) disk += dx * dx + dy * dy <= 4;
  CHECK(disk == 13);
  CHECK(heavy == 13);
  CHECK(cm.cost(40, 40) == kLethalCost);

  InflationConfig unk;
  unk.track_unknown = true;
  const auto u = inflate(blank(), m, unk);
  for (auto c : u.data()) CHECK(c == kUnknownCost);
  CHECK_THROWS_AS(inflate(g, m, InflationConfig{-1.0, 0.5, false}), DomainError);
}

TEST_CASE("cost falls with distance and obstacles only raise cost") {
  const GridGeometry geo({0.0, 0.0}, 0.25, 60, 60);
  InflationConfig cfg;
  cfg.robot_radius = 0.6;
  cfg.decay = 0.4;
  Rng rng(6);
  std::vector<CellIndex> cells;
  for (int k = 0; k < 6; ++k) cells.push_back({static_cast<int>(rng.below(60)), static_cast<int>(rng.below(60))});
  const auto cm = inflate_cells(geo, cells, cfg);
  std::vector<std::pair<double, int>> by_distance;
  for (int ix = 0; ix < 60; ++ix)
    for (int iy = 0; iy < 60; ++iy) by_distance.push_back({nearest(cells, ix, iy, 0.25), cm.cost(ix, iy)});
  std::sort(by_distance.begin(), by_distance.end());
  for (std::size_t i = 1; i < by_distance.size(); ++i)
    if (by_distance[i].first > by_distance[i - 1].first + 1e-12)
      CHECK(by_distance[i].second <= by_distance[i - 1].second);

  auto more = cells;
  more.push_back({30, 30});
  more.push_back({5, 50});
  const auto cm2 = inflate_cells(geo, more, cfg);
  for (std::size_t i = 0; i < cm.data().size(); ++i) CHECK(cm2.data()[i] >= cm.data()[i]);

  const auto df = distance_field(cm, kLethalCost);
  for (int ix = 0; ix < 60; ix += 7)
    for (int iy = 0; iy < 60; iy += 5)
      CHECK(df[cm.index(ix, iy)] == doctest::Approx(nearest(cells, ix, iy, 0.25)).epsilon(1e-12));
}

TEST_CASE("a wide corridor keeps a free lane") {
  const double res = 0.25, radius = 0.7;
  const GridGeometry geo({0.0, 0.0}, res, 60, 40);
  // Walls at rows 10 and 10 + gap; the gap exceeds 2 * (radius + res).
  const int gap = static_cast<int>(std::ceil(2.0 * (radius + res) / res)) + 1;
  std::vector<CellIndex> walls;
  for (int ix = 0; ix < 60; ++ix) {
    walls.push_back({ix, 10});
    walls.push_back({ix, 10 + gap});
  }
  const auto cm = inflate_cells(geo, walls, {radius, 0.3, false});
  bool lane = false;
  for (int iy = 11; iy < 10 + gap; ++iy) {
    bool row_free = true;
    for (int ix = 0; ix < 60; ++ix) row_free = row_free && cm.passable(ix, iy);
    lane = lane || row_free;
  }
  CHECK(lane);
}

TEST_CASE("graymap export") {
  auto g = blank();
  g.set_log_odds(1, 1, 4.0);
  const auto pgm = export_pgm(g);
  CHECK(pgm.rfind("P2", 0) == 0);
  CHECK(pgm.find("80 80") != std::string::npos);
  const auto cpgm = export_pgm(Costmap(g, kFreeCost));
  CHECK(cpgm.rfind("P2", 0) == 0);
}
