#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace pgsu {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
  friend bool operator==(Vec2 a, Vec2 b) = default;
};

inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double norm(Vec2 a) { return std::hypot(a.x, a.y); }
inline double distance(Vec2 a, Vec2 b) { return norm(a - b); }

enum class AgentType : std::uint8_t { vehicle = 0, pedestrian = 1, cyclist = 2 };
inline constexpr std::size_t kAgentTypeCount = 3;

std::string_view to_string(AgentType type);
AgentType agent_type_from_string(std::string_view name);

/// One observed agent. positions/velocities hold T_hist + 1 samples, oldest
/// first; the last sample is the current time.
struct AgentTrack {
  std::vector<Vec2> positions;
  std::vector<Vec2> velocities;
  AgentType type = AgentType::vehicle;
  double length = 4.8;
  double width = 1.8;

  friend bool operator==(const AgentTrack&, const AgentTrack&) = default;
};

struct LanePolyline {
  std::vector<Vec2> points;
  bool has_turn = false;
  bool traffic_controlled = false;

  friend bool operator==(const LanePolyline&, const LanePolyline&) = default;
};

struct Scene {
  std::vector<AgentTrack> agents;
  std::vector<LanePolyline> lanes;
  std::size_t target = 0;
  double hz = 10.0;

  /// Number of motion vectors per track (T_hist).
  std::size_t history_steps() const;

  friend bool operator==(const Scene&, const Scene&) = default;
};

/// Throws Error(data) when an invariant of Scene/AgentTrack/LanePolyline
/// does not hold.
void validate(const Scene& scene);

/// Agent-centric frame: origin at the target's current position, +x along its
/// current heading.
struct FrameTransform {
  Vec2 origin;
  double heading = 0.0;  // (-pi, pi]

  Vec2 to_local(Vec2 p) const;
  Vec2 to_world(Vec2 p) const;
  /// Rotates a free vector (velocity, displacement) without translating.
  Vec2 rotate_to_local(Vec2 v) const;
  Vec2 rotate_to_world(Vec2 v) const;
};

struct FrameResult {
  FrameTransform frame;
  bool degenerate_heading = false;  // stationary target, heading fell back to 0
};

/// Minimum displacement (m) for a motion vector to define the heading.
inline constexpr double kHeadingMinDisplacement = 0.05;

double wrap_angle(double angle);

FrameResult make_frame(const Scene& scene);

Vec2 to_local(const FrameTransform& frame, Vec2 point);

struct Selection {
  std::vector<std::size_t> indices;  // sorted by distance, ties by index
  std::vector<std::uint8_t> valid;   // length cap; true for filled slots
};

Selection filter_nearest(std::span<const double> distances, std::size_t cap);

struct Segment {
  Vec2 start;
  Vec2 end;
};

/// Arc-length-uniform resampling into `count` consecutive segments.
std::vector<Segment> resample_lane(std::span<const Vec2> points, std::size_t count);

struct FeatureDims {
  std::size_t max_agents = 20;    // N_a
  std::size_t max_lanes = 32;     // N_m
  std::size_t lane_segments = 10; // L
  std::size_t history_steps = 20; // T_hist
};

inline constexpr std::size_t kAgentFeatureDim = 6 + kAgentTypeCount;  // d_a
inline constexpr std::size_t kMapFeatureDim = 6;                       // d_m

/// Fixed-shape, padded block of polylines: count x steps x dim, row-major.
struct PolylineFeatures {
  std::size_t count = 0;
  std::size_t steps = 0;
  std::size_t dim = 0;
  std::vector<double> data;
  std::vector<std::uint8_t> valid;
  /// For each filled slot, the index of the source agent/lane in the scene.
  std::vector<std::size_t> source;

  PolylineFeatures() = default;
  PolylineFeatures(std::size_t count, std::size_t steps, std::size_t dim);

  double& at(std::size_t i, std::size_t t, std::size_t k) {
    return data[(i * steps + t) * dim + k];
  }
  double at(std::size_t i, std::size_t t, std::size_t k) const {
    return data[(i * steps + t) * dim + k];
  }
  std::span<double> row(std::size_t i) {
    return {data.data() + i * steps * dim, steps * dim};
  }
  std::span<const double> row(std::size_t i) const {
    return {data.data() + i * steps * dim, steps * dim};
  }
  std::size_t valid_count() const;
};

using AgentFeatureTensor = PolylineFeatures;
using MapFeatureTensor = PolylineFeatures;

AgentFeatureTensor build_agent_features(const Scene& scene,
                                        const FrameTransform& frame,
                                        const FeatureDims& dims);

MapFeatureTensor build_map_features(const Scene& scene,
                                    const FrameTransform& frame,
                                    const FeatureDims& dims);

/// Distance from `origin` to the closest point on the lane polyline.
double lane_distance(const LanePolyline& lane, Vec2 origin);

}  // namespace pgsu
