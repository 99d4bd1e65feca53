#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <vector>

#include "pgsu/rng.hpp"
#include "pgsu/scene.hpp"

namespace pgsu::test {

inline AgentTrack straight_track(Vec2 start, Vec2 velocity, std::size_t steps, double hz,
                                 AgentType type = AgentType::vehicle) {
  AgentTrack t;
  t.type = type;
  for (std::size_t k = 0; k <= steps; ++k) {
    const double time = static_cast<double>(k) / hz;
    t.positions.push_back(start + time * velocity);
    t.velocities.push_back(velocity);
  }
  if (type == AgentType::pedestrian) {
    t.length = 0.6;
    t.width = 0.6;
  } else if (type == AgentType::cyclist) {
    t.length = 1.8;
    t.width = 0.6;
  }
  return t;
}

inline LanePolyline random_lane(Rng& rng, double spread) {
  LanePolyline lane;
  Vec2 p{rng.uniform(-spread, spread), rng.uniform(-spread, spread)};
  double heading = rng.uniform(-std::numbers::pi, std::numbers::pi);
  const std::size_t n = 2 + rng.index(6);
  for (std::size_t k = 0; k < n; ++k) {
    lane.points.push_back(p);
    heading += rng.uniform(-0.3, 0.3);
    const double step = rng.uniform(2.0, 8.0);
    p = p + step * Vec2{std::cos(heading), std::sin(heading)};
  }
  lane.has_turn = rng.bernoulli(0.3);
  lane.traffic_controlled = rng.bernoulli(0.3);
  return lane;
}

/// Random scene with curved motion, mixed agent types and lanes.
inline Scene random_scene(Rng& rng, std::size_t agents, std::size_t lanes,
                          std::size_t steps = 20, double spread = 40.0) {
  Scene s;
  s.hz = 10.0;
  for (std::size_t i = 0; i < agents; ++i) {
    AgentTrack t;
    t.type = static_cast<AgentType>(rng.index(3));
    t.length = rng.uniform(1.0, 5.0);
    t.width = rng.uniform(0.6, 2.0);
    Vec2 p{rng.uniform(-spread, spread), rng.uniform(-spread, spread)};
    double heading = rng.uniform(-std::numbers::pi, std::numbers::pi);
    const double speed = rng.uniform(1.0, 25.0);
    const double turn = rng.uniform(-0.3, 0.3);
    for (std::size_t k = 0; k <= steps; ++k) {
      const Vec2 v = speed * Vec2{std::cos(heading), std::sin(heading)};
      t.positions.push_back(p);
      t.velocities.push_back(v);
      p = p + (1.0 / s.hz) * v;
      heading += turn / s.hz;
    }
    s.agents.push_back(std::move(t));
  }
  for (std::size_t j = 0; j < lanes; ++j) s.lanes.push_back(random_lane(rng, spread));
  s.target = rng.index(agents);
  return s;
}

}  // namespace pgsu::test
