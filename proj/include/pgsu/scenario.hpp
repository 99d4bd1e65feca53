#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "pgsu/heads.hpp"
#include "pgsu/rng.hpp"
#include "pgsu/scene.hpp"

namespace pgsu {

enum class ScenarioFamily : std::uint8_t { highway, urban };

std::string_view to_string(ScenarioFamily family);
ScenarioFamily family_from_string(std::string_view name);

/// A scene plus the target's ground-truth future and intention label.
struct LabeledScene {
  Scene scene;
  std::vector<Vec2> future;  // T_fut world points after the current time
  Intention intention = Intention::straight;

  friend bool operator==(const LabeledScene&, const LabeledScene&) = default;
};

struct GenConfig {
  ScenarioFamily family = ScenarioFamily::highway;
  std::size_t scene_count = 100;
  std::size_t agents_min = 3;  // surrounding agents, target excluded
  std::size_t agents_max = 8;
  double speed_min = 20.0;  // m/s
  double speed_max = 32.0;
  double lane_width = 3.5;
  std::size_t lane_count = 3;
  std::uint64_t seed = 0;
  double noise_std = 0.1;  // m, observed history positions only
  double p_left = 0.25;
  double p_right = 0.25;
  std::size_t history_steps = 20;
  std::size_t future_steps = 30;
  double hz = 10.0;
  double lane_piece_length = 20.0;  // m per lane polyline
  std::size_t max_retries = 50;

  /// Urban defaults: slower speeds, one lane per direction.
  static GenConfig urban_defaults();
  static GenConfig highway_defaults();
  void validate() const;
};

struct GenResult {
  std::vector<LabeledScene> scenes;
  std::size_t skipped = 0;
};

/// Deterministic: scene i depends only on (config, seed, i).
GenResult gen_highway(const GenConfig& config);
GenResult gen_urban(const GenConfig& config);
GenResult generate(const GenConfig& config);

/// Recomputes the label from the stored motion: heading change beyond 45
/// degrees marks a turn; otherwise a lateral shift beyond half a lane width
/// (relative to the initial heading) marks a lane change.
Intention derive_intention(const LabeledScene& s, double lane_width);

std::array<std::size_t, kIntentionCount> class_histogram(std::span<const LabeledScene> scenes);

/// Keeps every scene of the non-majority classes and a random subset of at
/// most `cap` scenes of the largest class; output order is shuffled.
std::vector<LabeledScene> balance(std::span<const LabeledScene> scenes, std::size_t cap,
                                  Rng& rng);

}  // namespace pgsu
