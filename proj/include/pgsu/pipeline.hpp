#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pgsu/config.hpp"
#include "pgsu/finetune.hpp"
#include "pgsu/pretrain.hpp"

namespace pgsu {

/// Receives human-readable output lines (histograms, tables, progress).
using Logger = std::function<void(std::string_view)>;

// Artifact names inside an output directory.
inline constexpr std::string_view kPretrainCheckpoint = "pretrain.ckpt";
inline constexpr std::string_view kPretrainOptimizer = "pretrain.optim";
inline constexpr std::string_view kPretrainLog = "pretrain_log.csv";
inline constexpr std::string_view kPretrainSummary = "pretrain_summary.csv";
inline constexpr std::string_view kFinetuneCheckpoint = "finetune.ckpt";
inline constexpr std::string_view kFinetuneLog = "metrics.csv";
inline constexpr std::string_view kEvalLog = "eval.csv";

/// Which parameter set a checkpoint holds.
enum class ModelKind : std::uint8_t { pretrain, trajectory, intention };

std::string_view to_string(ModelKind kind);

/// Closed-form parameter count of a freshly built model.
std::uint64_t closed_form_parameter_count(const ModelConfig& config, ModelKind kind);

/// Infers the kind from head parameter names; nullopt when unrecognized.
std::optional<ModelKind> infer_model_kind(const Checkpoint& ckpt);

struct GenDataResult {
  std::array<std::size_t, kIntentionCount> histogram{};
  std::size_t written = 0;
  std::size_t skipped = 0;
};

/// Generates (and optionally balances) a dataset and writes it to `out`.
GenDataResult run_gen_data(const RunConfig& config, const std::filesystem::path& out,
                           const Logger& log);

struct PretrainRunResult {
  std::vector<PretrainEpoch> log;
  double held_out_endpoint_error = 0.0;  // NaN when no held-out lanes
  double held_out_vif_loss = 0.0;
};

/// Pre-trains on a dataset file. Writes the resolved config, checkpoint,
/// optimizer state, per-epoch loss CSV and a one-row summary into out_dir.
/// With `resume`, continues from the artifacts already in out_dir.
PretrainRunResult run_pretrain_command(const RunConfig& config, const std::filesystem::path& data,
                                       const std::filesystem::path& out_dir, bool resume,
                                       const Logger& log);

/// One pre-training run per (w_vif, w_mrm) pair in subdirectories of out_dir
/// plus grid_summary.csv with one row per setting.
void run_pretrain_grid(const RunConfig& config, const std::filesystem::path& data,
                       const std::filesystem::path& out_dir, const std::vector<double>& w_vif,
                       const std::vector<double>& w_mrm, const Logger& log);

struct FinetuneRunResult {
  std::vector<MetricRow> log;
  std::vector<MetricRow> final_metrics;  // held-out metrics of the last epoch
};

/// Fine-tunes from `checkpoint` (backbone only) or from scratch.
FinetuneRunResult run_finetune_command(const RunConfig& config, const std::filesystem::path& data,
                                       const std::optional<std::filesystem::path>& checkpoint,
                                       const std::filesystem::path& out_dir, const Logger& log);

/// Pre-train configurations none / vif / mrm / both, each followed by
/// fine-tuning; writes ablation.csv with one row per mode.
std::vector<std::pair<PretrainMode, std::vector<MetricRow>>> run_ablation(
    const RunConfig& config, const std::filesystem::path& data,
    const std::filesystem::path& out_dir, const Logger& log);

/// Evaluates a fine-tuned checkpoint on a dataset without training.
std::vector<MetricRow> run_eval(const RunConfig& config, const std::filesystem::path& data,
                                const std::filesystem::path& checkpoint,
                                const std::filesystem::path& out_dir, const Logger& log);

struct VifRenderResult {
  std::vector<double> raw;
  std::vector<double> normalized;
  std::vector<std::size_t> slots;  // feature slot of each printed entry
  std::size_t width = 0;
  std::size_t height = 0;
};

/// Renders the field around scene `index` of a scene or dataset file into
/// <out_prefix>.txt and <out_prefix>.pgm and reports the target's VIF.
VifRenderResult run_vif_render(const RunConfig& config, const std::filesystem::path& scene_file,
                               std::size_t index, double resolution,
                               const std::filesystem::path& out_prefix, const Logger& log);

/// Lists entries, shapes and the total count; compares against the closed
/// form when a config is supplied.
void run_inspect(const std::filesystem::path& checkpoint, const RunConfig* config,
                 const Logger& log);

}  // namespace pgsu
