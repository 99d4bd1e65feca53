#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "pgsu/backbone.hpp"
#include "pgsu/heads.hpp"
#include "pgsu/nn.hpp"
#include "pgsu/sample.hpp"

namespace pgsu {

struct PretrainConfig {
  double w_vif = 10.0;
  double w_mrm = 1.0;
  double mask_ratio = 0.5;
  std::size_t epochs = 60;
  std::size_t batch_size = 64;
  double base_lr = 1e-3;
  std::uint64_t seed = 0;
  double held_out_fraction = 0.1;

  void validate() const;
};

/// Lanes selected for masking in one scene and the map with their rows
/// zeroed. Each masked lane keeps only its anchor (centroid of its segment
/// endpoints, local frame), which positions the mask embedding.
struct MaskedLanes {
  MapFeatureTensor masked;
  std::vector<std::size_t> lanes;  // masked slots, ascending
  std::vector<Vec2> anchors;       // one per masked lane
};

/// Mean of the start and end points of every segment of a lane slot.
Vec2 lane_anchor(const MapFeatureTensor& map, std::size_t slot);

/// round(ratio * valid), at least 1.
std::size_t mask_count(std::size_t valid_lanes, double ratio);

/// Uniform selection without replacement among valid slots.
MaskedLanes mask_lanes(const MapFeatureTensor& map, double ratio, Rng& rng);

/// Per scene: sum over valid slots of squared error divided by the number of
/// valid slots (0 when none), averaged over the batch. pred is [B, N_a].
Tensor vif_loss(const Tensor& pred, std::span<const VifTarget* const> targets);

/// Sum of start/end L2 distances over masked segments divided by
/// (masked lanes * segments per lane). pred and truth are [n_ml, L * 4].
Tensor mrm_loss(const Tensor& pred, const Tensor& truth);

/// Segment endpoints (first four features per segment) of the given slots,
/// [slots, L * 4].
Tensor lane_coordinates(const MapFeatureTensor& map, std::span<const std::size_t> slots);

struct PretrainModel {
  ParameterStore store;
  Backbone backbone;
  VifHead vif;
  MrmHead mrm;
  Tensor mask_token;   // [D]
  Mlp mask_position;   // anchor (2) -> D, added to the mask token

  PretrainModel(const ModelConfig& config, std::uint64_t seed);
};

struct StepLosses {
  double l_vif = 0.0;
  double l_mrm = 0.0;
  double l_pre = 0.0;
  std::size_t masked_lanes = 0;
};

struct MaskedEncoding {
  TokenSet tokens;
  std::vector<MaskedLanes> masks;  // one per scene, empty when not masked
};

/// Encodes a batch, masking lanes of every scene with valid lanes when
/// `masking` is set. Masked lanes enter the backbone as the mask token plus
/// a positional embedding of their anchor.
MaskedEncoding encode_masked(const PretrainModel& model, std::span<const Sample* const> batch,
                             bool masking, double mask_ratio, Rng& mask_rng,
                             const ForwardContext& ctx);

struct PretrainLossTensors {
  Tensor l_vif;
  Tensor l_mrm;  // undefined when no lanes were masked
  Tensor l_pre;
  std::size_t masked_lanes = 0;
};

/// Forward pass and weighted loss for a batch of samples. Lanes are masked
/// only when w_mrm > 0. Reconstructions are predicted as offsets from each
/// masked lane's anchor.
PretrainLossTensors pretrain_losses(const PretrainModel& model,
                                    std::span<const Sample* const> batch,
                                    const PretrainConfig& config, Rng& mask_rng,
                                    const ForwardContext& ctx);

/// w_vif * l_vif + w_mrm * l_mrm.
double combine_losses(double w_vif, double w_mrm, double l_vif, double l_mrm);

/// Forward, backward, one Adam step at learning rate `lr`.
StepLosses pretrain_step(PretrainModel& model, OptimizerState& opt,
                         std::span<const Sample* const> batch, const PretrainConfig& config,
                         Rng& mask_rng, Rng& dropout_rng, double lr);

struct PretrainEpoch {
  std::size_t epoch = 0;  // 1-based
  double l_vif = 0.0;
  double l_mrm = 0.0;
  double l_pre = 0.0;
  double lr = 0.0;
};

std::uint64_t pretrain_total_steps(std::size_t train_size, const PretrainConfig& config);

/// Trains epochs [first_epoch, last_epoch) (0-based) on `train`. Every
/// epoch draws its shuffling, masking and dropout streams from the run seed
/// and the epoch index, so a run split across calls matches an uninterrupted
/// one. `on_epoch` (optional) sees each finished epoch.
std::vector<PretrainEpoch> run_pretrain(PretrainModel& model, OptimizerState& opt,
                                        std::span<const Sample> train,
                                        const PretrainConfig& config, std::size_t first_epoch,
                                        std::size_t last_epoch,
                                        const std::function<void(const PretrainEpoch&)>& on_epoch = {});

/// Mean masked-endpoint L2 error (m) in eval mode with a fixed masking seed.
double mrm_endpoint_error(const PretrainModel& model, std::span<const Sample> samples,
                          const PretrainConfig& config, std::size_t batch_size = 64);

/// Mean VIF loss in eval mode.
double vif_eval_loss(const PretrainModel& model, std::span<const Sample> samples,
                     std::size_t batch_size = 64);

void write_pretrain_csv(std::ostream& out, std::span<const PretrainEpoch> log);
std::vector<PretrainEpoch> read_pretrain_csv(std::istream& in);

}  // namespace pgsu
