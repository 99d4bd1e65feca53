#include "pgsu/scene.hpp"

#include <algorithm>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>

#include "pgsu/error.hpp"

namespace pgsu {

std::string_view to_string(AgentType type) {
  switch (type) {
    case AgentType::vehicle: return "vehicle";
    case AgentType::pedestrian: return "pedestrian";
    case AgentType::cyclist: return "cyclist";
  }
  return "vehicle";
}

AgentType agent_type_from_string(std::string_view name) {
  if (name == "vehicle") return AgentType::vehicle;
  if (name == "pedestrian") return AgentType::pedestrian;
  if (name == "cyclist") return AgentType::cyclist;
  fail(ErrorKind::data, "unknown agent type '" + std::string(name) + "'");
}

std::size_t Scene::history_steps() const {
  if (agents.empty() || agents.front().positions.empty()) return 0;
  return agents.front().positions.size() - 1;
}

namespace {
bool finite(Vec2 p) { return std::isfinite(p.x) && std::isfinite(p.y); }
}  // namespace

void validate(const Scene& scene) {
  if (!(scene.hz > 0.0) || !std::isfinite(scene.hz))
    fail(ErrorKind::data, "scene rate must be positive");
  if (scene.target >= scene.agents.size())
    fail(ErrorKind::data, "target index " + std::to_string(scene.target) +
                              " does not name an agent");
  const std::size_t samples = scene.agents.front().positions.size();
  if (samples < 2) fail(ErrorKind::data, "agent tracks need at least 2 samples");
  for (std::size_t i = 0; i < scene.agents.size(); ++i) {
    const auto& a = scene.agents[i];
    const std::string tag = "agent " + std::to_string(i);
    if (a.positions.size() != samples || a.velocities.size() != samples)
      fail(ErrorKind::data, tag + ": track length differs from agent 0");
    if (!std::all_of(a.positions.begin(), a.positions.end(), finite) ||
        !std::all_of(a.velocities.begin(), a.velocities.end(), finite))
      fail(ErrorKind::data, tag + ": non-finite sample");
    if (!(a.length > 0.0) || !(a.width > 0.0))
      fail(ErrorKind::data, tag + ": bbox dimensions must be positive");
  }
  for (std::size_t j = 0; j < scene.lanes.size(); ++j) {
    const auto& pts = scene.lanes[j].points;
    const std::string tag = "lane " + std::to_string(j);
    if (pts.size() < 2) fail(ErrorKind::data, tag + ": fewer than 2 points");
    for (std::size_t k = 0; k < pts.size(); ++k) {
      if (!finite(pts[k])) fail(ErrorKind::data, tag + ": non-finite point");
      if (k > 0 && pts[k] == pts[k - 1])
        fail(ErrorKind::data, tag + ": repeated consecutive point");
    }
  }
}

double wrap_angle(double angle) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double a = std::fmod(angle, two_pi);
  if (a <= -std::numbers::pi) a += two_pi;
  if (a > std::numbers::pi) a -= two_pi;
  return a;
}

Vec2 FrameTransform::rotate_to_local(Vec2 v) const {
  const double c = std::cos(heading);
  const double s = std::sin(heading);
  return {v.x * c + v.y * s, -v.x * s + v.y * c};
}

Vec2 FrameTransform::rotate_to_world(Vec2 v) const {
  const double c = std::cos(heading);
  const double s = std::sin(heading);
  return {v.x * c - v.y * s, v.x * s + v.y * c};
}

Vec2 FrameTransform::to_local(Vec2 p) const { return rotate_to_local(p - origin); }

Vec2 FrameTransform::to_world(Vec2 p) const { return rotate_to_world(p) + origin; }

Vec2 to_local(const FrameTransform& frame, Vec2 point) { return frame.to_local(point); }

FrameResult make_frame(const Scene& scene) {
  if (scene.target >= scene.agents.size())
    fail(ErrorKind::data, "target agent missing");
  const auto& track = scene.agents[scene.target];
  if (track.positions.empty()) fail(ErrorKind::data, "target track is empty");

  FrameResult out;
  out.frame.origin = track.positions.back();
  for (std::size_t k = track.positions.size(); k-- > 1;) {
    const Vec2 d = track.positions[k] - track.positions[k - 1];
    if (norm(d) > kHeadingMinDisplacement) {
      out.frame.heading = wrap_angle(std::atan2(d.y, d.x));
      return out;
    }
  }
  // Slow mover: fall back to the recorded velocity direction.
  if (!track.velocities.empty()) {
    const Vec2 v = track.velocities.back();
    if (norm(v) > 1e-9) {
      out.frame.heading = wrap_angle(std::atan2(v.y, v.x));
      return out;
    }
  }
  out.frame.heading = 0.0;
  out.degenerate_heading = true;
  return out;
}

Selection filter_nearest(std::span<const double> distances, std::size_t cap) {
  if (cap == 0) fail(ErrorKind::usage, "filter_nearest: cap must be >= 1");
  std::vector<std::size_t> order(distances.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return distances[a] < distances[b];
  });
  Selection sel;
  const std::size_t n = std::min(order.size(), cap);
  sel.indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n));
  sel.valid.assign(cap, 0);
  std::fill_n(sel.valid.begin(), n, std::uint8_t{1});
  return sel;
}

std::vector<Segment> resample_lane(std::span<const Vec2> points, std::size_t count) {
  if (count == 0) fail(ErrorKind::usage, "resample_lane: segment count must be >= 1");
  if (points.size() < 2) fail(ErrorKind::data, "resample_lane: fewer than 2 points");
  std::vector<double> cumulative(points.size(), 0.0);
  for (std::size_t k = 1; k < points.size(); ++k)
    cumulative[k] = cumulative[k - 1] + distance(points[k], points[k - 1]);
  const double total = cumulative.back();
  if (!(total > 0.0)) fail(ErrorKind::data, "resample_lane: zero-length polyline");

  std::vector<Vec2> samples(count + 1);
  samples.front() = points.front();
  samples.back() = points.back();
  std::size_t seg = 1;
  for (std::size_t i = 1; i < count; ++i) {
    const double s = total * static_cast<double>(i) / static_cast<double>(count);
    while (seg + 1 < points.size() && cumulative[seg] < s) ++seg;
    const double span = cumulative[seg] - cumulative[seg - 1];
    const double u = span > 0.0 ? (s - cumulative[seg - 1]) / span : 0.0;
    samples[i] = points[seg - 1] + u * (points[seg] - points[seg - 1]);
  }
  std::vector<Segment> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = {samples[i], samples[i + 1]};
  return out;
}

PolylineFeatures::PolylineFeatures(std::size_t count, std::size_t steps, std::size_t dim)
    : count(count), steps(steps), dim(dim), data(count * steps * dim, 0.0),
      valid(count, 0) {}

std::size_t PolylineFeatures::valid_count() const {
  return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), std::uint8_t{1}));
}

AgentFeatureTensor build_agent_features(const Scene& scene,
                                        const FrameTransform& frame,
                                        const FeatureDims& dims) {
  if (scene.target >= scene.agents.size())
    fail(ErrorKind::data, "target agent missing");
  if (dims.max_agents == 0) fail(ErrorKind::usage, "max_agents must be >= 1");
  const std::size_t steps = dims.history_steps;
  if (scene.history_steps() != steps)
    fail(ErrorKind::data, "scene has " + std::to_string(scene.history_steps()) +
                              " motion vectors, expected " + std::to_string(steps));

  AgentFeatureTensor out(dims.max_agents, steps, kAgentFeatureDim);

  std::vector<std::size_t> others;
  std::vector<double> dist;
  for (std::size_t i = 0; i < scene.agents.size(); ++i) {
    if (i == scene.target) continue;
    others.push_back(i);
    dist.push_back(distance(scene.agents[i].positions.back(), frame.origin));
  }

  std::vector<std::size_t> chosen{scene.target};
  if (dims.max_agents > 1) {
    const Selection sel = filter_nearest(dist, dims.max_agents - 1);
    for (std::size_t idx : sel.indices) chosen.push_back(others[idx]);
  }

  for (std::size_t slot = 0; slot < chosen.size(); ++slot) {
    const AgentTrack& track = scene.agents[chosen[slot]];
    for (std::size_t t = 0; t < steps; ++t) {
      const Vec2 s = frame.to_local(track.positions[t]);
      const Vec2 e = frame.to_local(track.positions[t + 1]);
      const Vec2 v = frame.rotate_to_local(track.velocities[t + 1]);
      double* row = &out.at(slot, t, 0);
      row[0] = s.x;
      row[1] = s.y;
      row[2] = e.x;
      row[3] = e.y;
      row[4] = v.x;
      row[5] = v.y;
      row[6 + static_cast<std::size_t>(track.type)] = 1.0;
    }
    out.valid[slot] = 1;
    out.source.push_back(chosen[slot]);
  }
  return out;
}

double lane_distance(const LanePolyline& lane, Vec2 origin) {
  double best = std::numeric_limits<double>::infinity();
  if (lane.points.size() == 1) return distance(lane.points[0], origin);
  for (std::size_t k = 1; k < lane.points.size(); ++k) {
    const Vec2 a = lane.points[k - 1];
    const Vec2 ab = lane.points[k] - a;
    const double len2 = ab.x * ab.x + ab.y * ab.y;
    double t = 0.0;
    if (len2 > 0.0) {
      const Vec2 ao = origin - a;
      t = std::clamp((ao.x * ab.x + ao.y * ab.y) / len2, 0.0, 1.0);
    }
    best = std::min(best, distance(a + t * ab, origin));
  }
  return best;
}

MapFeatureTensor build_map_features(const Scene& scene,
                                    const FrameTransform& frame,
                                    const FeatureDims& dims) {
  if (dims.max_lanes == 0) fail(ErrorKind::usage, "max_lanes must be >= 1");
  const std::size_t segs = dims.lane_segments;
  MapFeatureTensor out(dims.max_lanes, segs, kMapFeatureDim);

  std::vector<double> dist;
  dist.reserve(scene.lanes.size());
  for (const auto& lane : scene.lanes) dist.push_back(lane_distance(lane, frame.origin));
  const Selection sel = filter_nearest(dist, dims.max_lanes);

  for (std::size_t slot = 0; slot < sel.indices.size(); ++slot) {
    const LanePolyline& lane = scene.lanes[sel.indices[slot]];
    const auto segments = resample_lane(lane.points, segs);
    for (std::size_t j = 0; j < segs; ++j) {
      const Vec2 s = frame.to_local(segments[j].start);
      const Vec2 e = frame.to_local(segments[j].end);
      double* row = &out.at(slot, j, 0);
      row[0] = s.x;
      row[1] = s.y;
      row[2] = e.x;
      row[3] = e.y;
      row[4] = lane.has_turn ? 1.0 : 0.0;
      row[5] = lane.traffic_controlled ? 1.0 : 0.0;
    }
    out.valid[slot] = 1;
    out.source.push_back(sel.indices[slot]);
  }
  return out;
}

}  // namespace pgsu
