#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "pgsu/backbone.hpp"
#include "pgsu/heads.hpp"
#include "pgsu/safety_field.hpp"
#include "pgsu/scenario.hpp"
#include "pgsu/scene.hpp"

namespace pgsu {

/// Architecture-level settings shared by pre-training and fine-tuning.
struct ModelConfig {
  FeatureDims dims;
  BackboneConfig backbone;
  std::size_t modes = 6;          // K
  std::size_t future_steps = 30;  // T_fut
};

/// Model-ready view of one scene in its agent-centric frame.
struct Sample {
  AgentFeatureTensor agents;
  MapFeatureTensor map;
  FrameTransform frame;
  bool degenerate_heading = false;
  VifTarget vif;                   // empty unless requested
  std::vector<Vec2> future_local;  // empty for unlabeled scenes
  Intention intention = Intention::straight;
};

/// `field` may be null to skip the VIF oracle.
Sample prepare_sample(const Scene& scene, const FeatureDims& dims, const FieldParams* field);
Sample prepare_sample(const LabeledScene& scene, const ModelConfig& model, const FieldParams* field);

std::vector<Sample> prepare_samples(std::span<const LabeledScene> scenes, const ModelConfig& model,
                                    const FieldParams* field, std::size_t workers = 1);

/// Runs fn(i) for i in [0, n) on up to `workers` threads. fn must only touch
/// per-index state.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

/// Deterministic split: the last round(fraction * n) indices of a seeded
/// permutation form the held-out part.
struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> held_out;
};
Split split_indices(std::size_t n, double held_out_fraction, std::uint64_t seed);

/// Seeded permutation of [0, n).
std::vector<std::size_t> permutation(std::size_t n, Rng& rng);

}  // namespace pgsu
