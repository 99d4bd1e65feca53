#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "pgsu/nn.hpp"
#include "pgsu/scene.hpp"
#include "pgsu/tensor.hpp"

namespace pgsu {

enum class Intention : std::uint8_t { left = 0, straight = 1, right = 2 };
inline constexpr std::size_t kIntentionCount = 3;

std::string_view to_string(Intention intention);
Intention intention_from_string(std::string_view name);

// ---- pre-train decoders ----------------------------------------------------

/// D -> D -> N_a, sigmoid: predicted normalized force per agent slot.
struct VifHead {
  Mlp mlp;

  static VifHead create(ParameterStore& store, std::size_t d_model, std::size_t n_agents,
                        Rng& rng);
  Tensor operator()(const Tensor& ego_tokens, const ForwardContext& ctx) const;
};

/// D -> D -> L * 4: per-segment (start, end) of a masked lane, local frame.
struct MrmHead {
  Mlp mlp;
  double coord_scale = 1.0;

  static MrmHead create(ParameterStore& store, std::size_t d_model, std::size_t lane_segments,
                        double coord_scale, Rng& rng);
  Tensor operator()(const Tensor& lane_tokens, const ForwardContext& ctx) const;
};

// ---- trajectory prediction -------------------------------------------------

struct TrajectoryPrediction {
  std::size_t modes = 0;
  std::size_t steps = 0;
  std::vector<double> trajectories;  // modes x steps x 2
  std::vector<double> mode_probs;    // modes

  Vec2 point(std::size_t k, std::size_t t) const {
    const std::size_t i = (k * steps + t) * 2;
    return {trajectories[i], trajectories[i + 1]};
  }
};

/// Four-layer trajectory MLP (K * T_fut * 2 outputs) plus a three-layer
/// mode-probability MLP followed by softmax.
struct TrajectoryHead {
  Mlp trajectories;
  Mlp probabilities;
  std::size_t modes = 6;
  std::size_t steps = 30;
  double coord_scale = 1.0;

  struct Output {
    Tensor trajectories;  // [B, K * T * 2]
    Tensor probs;         // [B, K]
  };

  static TrajectoryHead create(ParameterStore& store, std::size_t d_model, std::size_t modes,
                               std::size_t steps, double coord_scale, Rng& rng);
  Output operator()(const Tensor& ego_tokens, const ForwardContext& ctx) const;
};

std::vector<TrajectoryPrediction> to_predictions(const TrajectoryHead::Output& out,
                                                 std::size_t modes, std::size_t steps);

/// Mode whose final point is closest to the final ground-truth point; ties
/// resolve to the lowest index.
std::size_t best_mode(const TrajectoryPrediction& pred, std::span<const Vec2> truth);

struct PredictionLoss {
  Tensor total;           // regression + classification
  Tensor regression;      // smooth-L1 on the best mode
  Tensor classification;  // -log p[best]
};

/// Winner-takes-all loss averaged over the batch. Mode selection is a hard
/// argmin on the current values and carries no gradient.
PredictionLoss prediction_loss(const TrajectoryHead::Output& out, std::size_t modes,
                               std::size_t steps,
                               std::span<const std::vector<Vec2>> truths);

double min_ade(const TrajectoryPrediction& pred, std::span<const Vec2> truth);
double min_fde(const TrajectoryPrediction& pred, std::span<const Vec2> truth);

// ---- intention recognition -------------------------------------------------

struct IntentionPrediction {
  std::array<double, kIntentionCount> probs{};  // left, straight, right

  /// Highest probability; ties go to the earliest of left, straight, right.
  Intention predicted() const;
};

/// Four-layer MLP to 3 logits, softmax.
struct IntentionHead {
  Mlp mlp;

  static IntentionHead create(ParameterStore& store, std::size_t d_model, Rng& rng);
  Tensor operator()(const Tensor& ego_tokens, const ForwardContext& ctx) const;
};

std::vector<IntentionPrediction> to_predictions(const Tensor& probs);

inline constexpr double kIntentionLogEps = 1e-12;

/// Cross-entropy of one-hot labels against predicted probabilities.
Tensor intention_loss(const Tensor& probs, std::span<const Intention> labels);

struct ClassificationReport {
  std::array<std::optional<double>, kIntentionCount> per_class;  // absent when no samples
  std::array<std::size_t, kIntentionCount> class_counts{};
  double overall = 0.0;
  std::size_t total = 0;
};

ClassificationReport classification_report(std::span<const Intention> preds,
                                           std::span<const Intention> labels);

}  // namespace pgsu
