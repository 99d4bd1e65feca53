#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "doctest.h"
#include "pgsu/error.hpp"
#include "pgsu/safety_field.hpp"
#include "support.hpp"

using namespace pgsu;
using pgsu::test::random_scene;
using pgsu::test::straight_track;

namespace {

constexpr double kPi = std::numbers::pi;

FieldParams static_only() {
  FieldParams p;
  p.k1 = 1e-300;  // validate() wants strictly positive coefficients
  return p;
}

double rel(double a, double b) { return std::abs(a - b) / std::abs(b); }

// Ego at the origin heading +x; source placed at distance r along `bearing`.
double force_at(double r, double bearing, const FieldParams& p, double res) {
  const FieldSource src{{r * std::cos(bearing), r * std::sin(bearing)}, {8.0, 1.0}, 1500.0};
  const OrientedBox ego{{0.0, 0.0}, 0.3, 4.8, 1.8, {12.0, 0.0}};
  return box_mean(ego, res, [&](Vec2 q) { return total_energy(src, q, ego.velocity, p); });
}

}  // namespace

TEST_CASE("static energy examples") {
  const FieldParams p;
  const FieldSource src{{0, 0}, {10, 0}, 1500.0};
  // G M (a v^c + b) / r^2 with G = 1, M = 1500, a = b = c = 1.
  CHECK(static_energy(src, {10, 0}, p) == doctest::Approx(1500.0 * 11.0 / 100.0));
  CHECK(static_energy(src, {0.1, 0}, p) == static_energy(src, {0.5, 0}, p));
  CHECK(static_energy(src, {0, 6}, p) == 4.0 * static_energy(src, {0, 12}, p));
}

TEST_CASE("dynamic energy examples") {
  const FieldParams p;
  const FieldSource src{{0, 0}, {3, 1}, 1500.0};
  CHECK(dynamic_energy(src, {5, 5}, {3, 1}, p) == 0.0);

  // dv = (0, 4) perpendicular to dr = (8, 0): exponent vanishes.
  const FieldSource still{{0, 0}, {0, 0}, 1500.0};
  CHECK(dynamic_energy(still, {8, 0}, {0, 4}, p) == doctest::Approx(1.0 * 16.0 / 8.0));

  // Closing (dv . dr < 0) vs opening at equal |dv| and r.
  const double closing = dynamic_energy(still, {8, 0}, {-4, 0}, p);
  const double opening = dynamic_energy(still, {8, 0}, {4, 0}, p);
  CHECK(closing < opening);
  CHECK(closing == doctest::Approx(16.0 * std::exp(0.05 * -32.0) / 8.0));

  FieldParams flipped = p;
  flipped.negate_exponent = true;
  CHECK(dynamic_energy(still, {8, 0}, {-4, 0}, flipped) ==
        doctest::Approx(dynamic_energy(still, {8, 0}, {4, 0}, p)));
}

TEST_CASE("total energy is the sum of its parts") {
  const FieldParams p;
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    const FieldSource src{{rng.uniform(-20, 20), rng.uniform(-20, 20)},
                          {rng.uniform(-10, 10), rng.uniform(-10, 10)},
                          rng.uniform(50, 2000)};
    const Vec2 q{rng.uniform(-20, 20), rng.uniform(-20, 20)};
    const Vec2 v{rng.uniform(-10, 10), rng.uniform(-10, 10)};
    CHECK(total_energy(src, q, v, p) ==
          static_energy(src, q, p) + dynamic_energy(src, q, v, p));
  }
  const FieldSource zero{{0, 0}, {0, 0}, 1500.0};
  FieldParams tiny = static_only();
  tiny.G = 1e-300;
  CHECK(total_energy(zero, {5, 0}, {0, 0}, tiny) < 1e-290);
}

TEST_CASE("box_mean of a constant field is the constant") {
  Rng rng(4);
  for (int i = 0; i < 20; ++i) {
    const OrientedBox box{{rng.uniform(-5, 5), rng.uniform(-5, 5)},
                          rng.uniform(-kPi, kPi), rng.uniform(1, 6), rng.uniform(0.6, 2.5)};
    const double e = rng.uniform(0.1, 100);
    CHECK(box_mean(box, 0.2, [e](Vec2) { return e; }) == doctest::Approx(e));
  }
  const OrientedBox box{{0, 0}, 0.0, 4.8, 1.8, {}};
  CHECK_THROWS_AS(box_mean(box, 1.0, [](Vec2) { return 1.0; }), Error);
  CHECK_THROWS_AS(box_mean(box, 0.0, [](Vec2) { return 1.0; }), Error);
}

TEST_CASE("box_mean integrates a linear field exactly and covers the box") {
  // The midpoint rule is exact for affine integrands: the mean equals the
  // value at the box center.
  const OrientedBox box{{2.0, -1.0}, 0.7, 4.8, 1.8, {}};
  const double m = box_mean(box, 0.2, [](Vec2 q) { return 3.0 * q.x - 2.0 * q.y + 1.0; });
  CHECK(m == doctest::Approx(3.0 * 2.0 + 2.0 + 1.0));
  // 4.8 x 1.8 at 0.2 m gives 24 x 9 = 216 sample points.
  std::size_t calls = 0;
  box_mean(box, 0.2, [&](Vec2) { ++calls; return 0.0; });
  CHECK(calls == 216);
}

TEST_CASE("virtual force far-field limit") {
  const FieldParams p = static_only();
  const FieldSource src{{1000.0, 0.0}, {10.0, 0.0}, 1500.0};
  const OrientedBox ego{{0, 0}, 0.0, 4.8, 1.8, {10.0, 0.0}};
  const double expected = 1.0 * 1500.0 * (10.0 + 1.0) / (1000.0 * 1000.0);
  CHECK(rel(virtual_force(src, ego, p), expected) < 1e-3);
}

TEST_CASE("quadrature converges for sources beyond 2 m") {
  const FieldParams p;
  Rng rng(6);
  for (int i = 0; i < 50; ++i) {
    const double r = rng.uniform(2.0, 40.0) + 2.6;  // at least 2 m from every box point
    const double bearing = rng.uniform(-kPi, kPi);
    const double coarse = force_at(r, bearing, p, 0.2);
    const double fine = force_at(r, bearing, p, 0.05);
    CHECK(rel(coarse, fine) < 0.01);
    const double half = force_at(r, bearing, p, 0.1);
    CHECK(rel(half, coarse) < 0.01);
  }
}

TEST_CASE("static force decreases strictly with radial distance") {
  const FieldParams p = static_only();
  for (double bearing : {0.0, 0.8, kPi / 2, 2.5, -2.0}) {
    double prev = force_at(2.0, bearing, p, 0.2);
    for (double r = 2.5; r < 60.0; r += 0.5) {
      const double f = force_at(r, bearing, p, 0.2);
      CHECK(f < prev);
      prev = f;
    }
  }
}

TEST_CASE("normalize_forces examples") {
  const std::vector<std::uint8_t> all3{1, 1, 1};
  const auto n = normalize_forces(std::vector<double>{2, 4, 6}, all3);
  CHECK(n == std::vector<double>{0.0, 0.5, 1.0});
  CHECK(normalize_forces(std::vector<double>{3.5}, std::vector<std::uint8_t>{1}) ==
        std::vector<double>{1.0});
  CHECK(normalize_forces(std::vector<double>{0, 0, 0}, all3) == std::vector<double>{0, 0, 0});
  CHECK(normalize_forces(std::vector<double>{9, 2, 4}, std::vector<std::uint8_t>{0, 1, 1}) ==
        std::vector<double>{0.0, 0.0, 1.0});
}

TEST_CASE("normalization property: range, extremes, scale invariance") {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.index(20);
    std::vector<double> raw(n);
    std::vector<std::uint8_t> valid(n);
    for (std::size_t i = 0; i < n; ++i) {
      raw[i] = rng.uniform(0, 50);
      valid[i] = rng.bernoulli(0.7);
    }
    const auto out = normalize_forces(raw, valid);
    std::size_t ones = 0, zeros = 0, count = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!valid[i]) {
        CHECK(out[i] == 0.0);
        continue;
      }
      ++count;
      CHECK(out[i] >= 0.0);
      CHECK(out[i] <= 1.0);
      ones += out[i] == 1.0;
      zeros += out[i] == 0.0;
    }
    if (count >= 2) {
      CHECK(ones == 1);
      CHECK(zeros == 1);
    }
    const double lambda = std::exp(rng.uniform(-5, 5));
    std::vector<double> scaled(raw);
    for (auto& x : scaled) x *= lambda;
    const auto again = normalize_forces(scaled, valid);
    for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(again[i] - out[i]) < 1e-12);
  }
}

TEST_CASE("vif_vector pads, excludes the ego and normalizes") {
  Scene s;
  s.agents.push_back(straight_track({0, 0}, {10, 0}, 20, 10.0));
  s.agents.push_back(straight_track({10, 3.5}, {10, 0}, 20, 10.0));
  s.agents.push_back(straight_track({40, 0}, {8, 0}, 20, 10.0));
  const std::vector<std::size_t> slots{0, 1, 2};
  const FieldParams p;
  const VifTarget v = vif_vector(s, slots, 5, p);
  CHECK(v.forces.size() == 5);
  CHECK(v.valid == std::vector<std::uint8_t>{0, 1, 1, 0, 0});
  CHECK(v.forces[0] == 0.0);
  CHECK(v.forces[1] == 1.0);  // the close neighbour dominates
  CHECK(v.forces[2] == 0.0);
  CHECK(v.forces[3] == 0.0);
  CHECK(v.raw[1] > v.raw[2]);

  const VifTarget lone = vif_vector(s, std::vector<std::size_t>{0, 2}, 3, p);
  CHECK(lone.forces == std::vector<double>{0.0, 1.0, 0.0});

  CHECK_THROWS_AS(vif_vector(s, std::vector<std::size_t>{}, 3, p), Error);
  CHECK_THROWS_AS(vif_vector(s, std::vector<std::size_t>{7}, 3, p), Error);
}

TEST_CASE("VIF is invariant to rescaling G") {
  Rng rng(10);
  for (int trial = 0; trial < 10; ++trial) {
    Scene s = random_scene(rng, 2 + rng.index(6), 0);
    for (auto& a : s.agents) {
      a.length = 4.8;
      a.width = 1.8;
    }
    std::vector<std::size_t> slots{s.target};
    for (std::size_t i = 0; i < s.agents.size(); ++i)
      if (i != s.target) slots.push_back(i);
    FieldParams p;
    FieldParams big = p;
    big.G = 1000.0;
    big.k1 = 1000.0;
    const auto a = vif_vector(s, slots, 8, p);
    const auto b = vif_vector(s, slots, 8, big);
    for (std::size_t i = 0; i < 8; ++i) CHECK(std::abs(a.forces[i] - b.forces[i]) < 1e-12);
  }
}

TEST_CASE("raw forces are invariant to rigid transforms of the scene") {
  Rng rng(12);
  const FieldParams p;
  for (int trial = 0; trial < 20; ++trial) {
    Scene s = random_scene(rng, 2 + rng.index(6), 0);
    for (auto& a : s.agents) {
      a.length = rng.uniform(2, 5);
      a.width = rng.uniform(1.2, 2);
    }
    std::vector<std::size_t> slots{s.target};
    for (std::size_t i = 0; i < s.agents.size(); ++i)
      if (i != s.target) slots.push_back(i);
    const FrameTransform moved{{rng.uniform(-300, 300), rng.uniform(-300, 300)},
                               rng.uniform(-kPi, kPi)};
    Scene t = s;
    for (auto& a : t.agents) {
      for (auto& q : a.positions) q = moved.to_world(q);
      for (auto& v : a.velocities) v = moved.rotate_to_world(v);
    }
    const auto a = vif_vector(s, slots, 8, p);
    const auto b = vif_vector(t, slots, 8, p);
    for (std::size_t i = 1; i < slots.size(); ++i)
      CHECK(std::abs(a.raw[i] - b.raw[i]) <= 1e-6 * std::abs(a.raw[i]));
  }
}

TEST_CASE("render_field examples") {
  FieldParams p;
  p.r_min = 0.1;
  Scene s;
  s.agents.push_back(straight_track({0, 0}, {0, 0}, 20, 10.0));
  const Region region{{-10, -5}, {10.1, 5}};
  const FieldGrid empty = render_field(s, region, 0.5, p);
  CHECK(empty.width == 41);  // ceil(20.1 / 0.5)
  CHECK(empty.height == 20);
  CHECK(std::all_of(empty.values.begin(), empty.values.end(), [](double x) { return x == 0.0; }));

  s.agents.push_back(straight_track({3.1, 1.2}, {0, 0}, 20, 10.0));
  const FieldGrid one = render_field(s, region, 0.5, p);
  const auto it = std::max_element(one.values.begin(), one.values.end());
  const std::size_t k = static_cast<std::size_t>(it - one.values.begin());
  const Vec2 cell{region.min.x + (static_cast<double>(k % one.width) + 0.5) * 0.5,
                  region.min.y + (static_cast<double>(k / one.width) + 0.5) * 0.5};
  // Nearest cell center to (3.1, 1.2) on the 0.5 m grid offset by 0.25.
  CHECK(cell.x == doctest::Approx(3.25));
  CHECK(cell.y == doctest::Approx(1.25));

  CHECK_THROWS_AS(render_field(s, region, 0.0, p), Error);
  CHECK_THROWS_AS(render_field(s, Region{{0, 0}, {0, 5}}, 0.5, p), Error);

  std::ostringstream text;
  write_field_text(text, one);
  std::istringstream in(text.str());
  std::size_t w = 0, h = 0;
  double res = 0, ox = 0, oy = 0;
  in >> w >> h >> res >> ox >> oy;
  CHECK(w == one.width);
  CHECK(h == one.height);
  CHECK(res == 0.5);
  CHECK(ox == -10.0);
  double first = 0;
  in >> first;
  CHECK(first == one.values[0]);

  std::ostringstream pgm;
  write_field_pgm(pgm, one);
  const std::string bytes = pgm.str();
  const std::string header = "P5\n41 20\n255\n";
  CHECK(bytes.substr(0, header.size()) == header);
  CHECK(bytes.size() == header.size() + 41 * 20);
}

TEST_CASE("field parameters are validated") {
  FieldParams p;
  CHECK_NOTHROW(p.validate(1.8));
  p.grid_res = 1.0;
  CHECK_THROWS_AS(p.validate(1.8), Error);
  p = FieldParams{};
  p.G = 0.0;
  CHECK_THROWS_AS(p.validate(1.8), Error);
  p = FieldParams{};
  p.k2 = -1.0;
  CHECK_THROWS_AS(p.validate(1.8), Error);
}

TEST_CASE("pedestrian and cyclist sources use scaled masses") {
  const FieldParams p;
  const auto ped = straight_track({0, 0}, {1, 0}, 2, 10.0, AgentType::pedestrian);
  const auto cyc = straight_track({0, 0}, {1, 0}, 2, 10.0, AgentType::cyclist);
  CHECK(make_source(ped, p).mass == doctest::Approx(1500.0 * 0.05));
  CHECK(make_source(cyc, p).mass == doctest::Approx(1500.0 * 0.1));
}
