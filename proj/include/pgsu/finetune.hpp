#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pgsu/backbone.hpp"
#include "pgsu/checkpoint.hpp"
#include "pgsu/heads.hpp"
#include "pgsu/nn.hpp"
#include "pgsu/sample.hpp"

namespace pgsu {

enum class Task : std::uint8_t { trajectory, intention };

std::string_view to_string(Task task);
Task task_from_string(std::string_view name);

/// Which pre-training objectives produced the backbone being fine-tuned.
enum class PretrainMode : std::uint8_t { none, vif, mrm, both };

std::string_view to_string(PretrainMode mode);
PretrainMode pretrain_mode_from_string(std::string_view name);

/// Loss weights (w_vif, w_mrm) used to pre-train for a mode; none has no
/// pre-training.
std::pair<double, double> pretrain_weights(PretrainMode mode);

struct FinetuneConfig {
  Task task = Task::trajectory;
  std::size_t epochs = 60;
  std::size_t batch_size = 0;  // 0 selects the task default (64 / 256)
  double base_lr = 1e-3;
  bool freeze_backbone = false;
  double val_fraction = 0.2;
  std::uint64_t seed = 0;

  std::size_t effective_batch() const;
  void validate() const;
};

inline constexpr std::size_t kTrajectoryBatch = 64;
inline constexpr std::size_t kIntentionBatch = 256;

/// Backbone plus the head of one downstream task.
struct FinetuneModel {
  ParameterStore store;
  Backbone backbone;
  Task task;
  TrajectoryHead trajectory;  // populated for Task::trajectory
  IntentionHead intention;    // populated for Task::intention
  std::size_t modes = 6;
  std::size_t future_steps = 30;

  FinetuneModel(const ModelConfig& config, Task task, std::uint64_t seed);
};

/// Copies backbone parameters from a pre-training (or any) checkpoint; heads
/// keep their fresh values. Missing or mis-shaped backbone names raise
/// Error(data) listing every offender.
void load_backbone(FinetuneModel& model, const Checkpoint& ckpt);

/// Task loss on a batch (train or eval mode according to ctx).
Tensor finetune_loss(const FinetuneModel& model, std::span<const Sample* const> batch,
                     const ForwardContext& ctx);

struct TrajectoryMetrics {
  double min_ade = 0.0;
  double min_fde = 0.0;
  std::size_t count = 0;
};

std::vector<TrajectoryPrediction> predict_trajectories(const FinetuneModel& model,
                                                       std::span<const Sample> samples,
                                                       std::size_t batch_size = 64,
                                                       std::size_t workers = 1);
std::vector<IntentionPrediction> predict_intentions(const FinetuneModel& model,
                                                    std::span<const Sample> samples,
                                                    std::size_t batch_size = 256,
                                                    std::size_t workers = 1);

TrajectoryMetrics evaluate_trajectory(const FinetuneModel& model, std::span<const Sample> samples,
                                      std::size_t workers = 1);
ClassificationReport evaluate_intention(const FinetuneModel& model,
                                        std::span<const Sample> samples, std::size_t workers = 1);

struct MetricRow {
  std::size_t epoch = 0;
  std::string split;
  std::string metric;
  double value = 0.0;

  friend bool operator==(const MetricRow&, const MetricRow&) = default;
};

/// Task metrics as named rows: min_ade/min_fde or accuracy_{overall,left,
/// straight,right} (absent classes omitted).
std::vector<MetricRow> evaluate_rows(const FinetuneModel& model, std::span<const Sample> samples,
                                     std::size_t epoch, const std::string& split,
                                     std::size_t workers = 1);

/// Trains epochs [first_epoch, last_epoch) on `train`, logging the mean
/// training loss and the held-out metrics after every epoch.
std::vector<MetricRow> run_finetune(FinetuneModel& model, OptimizerState& opt,
                                    std::span<const Sample> train, std::span<const Sample> val,
                                    const FinetuneConfig& config, std::size_t first_epoch,
                                    std::size_t last_epoch, std::size_t workers = 1,
                                    const std::function<void(const MetricRow&)>& on_row = {});

void write_metric_csv(std::ostream& out, std::span<const MetricRow> rows);
std::vector<MetricRow> read_metric_csv(std::istream& in);

}  // namespace pgsu
