#include "pgsu/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "pgsu/checkpoint.hpp"
#include "pgsu/error.hpp"
#include "pgsu/scene_io.hpp"

namespace pgsu {

namespace fs = std::filesystem;

namespace {

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

std::string full(double v) { return fmt("%.17g", v); }

void emit(const Logger& log, const std::string& line) {
  if (log) log(line);
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    fail(ErrorKind::data, "cannot create output directory '" + dir.string() + "'");
  }
}

template <typename Write>
void write_text(const fs::path& path, Write write) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) fail(ErrorKind::data, "cannot open '" + path.string() + "' for writing");
  write(out);
  out.flush();
  if (!out) fail(ErrorKind::data, "write to '" + path.string() + "' failed");
}

std::ifstream open_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::data, "cannot open '" + path.string() + "'");
  return in;
}

std::vector<Sample> subset(std::span<const Sample> all, std::span<const std::size_t> idx) {
  std::vector<Sample> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(all[i]);
  return out;
}

std::vector<Sample> load_samples(const RunConfig& config, const fs::path& data, bool with_field) {
  const std::vector<LabeledScene> scenes = read_dataset(data);
  if (scenes.empty()) fail(ErrorKind::data, "dataset '" + data.string() + "' is empty");
  const FieldParams field = config.field_params();
  return prepare_samples(scenes, config.model_config(), with_field ? &field : nullptr,
                         config.workers());
}

std::string format_weight(double w) {
  std::ostringstream ss;
  ss << w;
  return ss.str();
}

void print_metrics(const Logger& log, Task task, std::span<const MetricRow> rows) {
  auto value = [&](const std::string& metric) -> std::string {
    for (const MetricRow& r : rows) {
      if (r.metric == metric) {
        return task == Task::trajectory ? fmt("%.4f", r.value) : fmt("%.2f%%", 100.0 * r.value);
      }
    }
    return "-";
  };
  char buf[160];
  if (task == Task::trajectory) {
    emit(log, "minADE     minFDE");
    std::snprintf(buf, sizeof buf, "%-10s %-10s", value("min_ade").c_str(), value("min_fde").c_str());
  } else {
    emit(log, "Straight   Left       Right      Overall");
    std::snprintf(buf, sizeof buf, "%-10s %-10s %-10s %-10s", value("accuracy_straight").c_str(),
                  value("accuracy_left").c_str(), value("accuracy_right").c_str(),
                  value("accuracy_overall").c_str());
  }
  emit(log, buf);
}

std::vector<std::string> metric_columns(Task task) {
  if (task == Task::trajectory) return {"min_ade", "min_fde"};
  return {"accuracy_overall", "accuracy_left", "accuracy_straight", "accuracy_right"};
}

}  // namespace

std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::pretrain: return "pretrain";
    case ModelKind::trajectory: return "trajectory";
    case ModelKind::intention: return "intention";
  }
  return "pretrain";
}

std::uint64_t closed_form_parameter_count(const ModelConfig& config, ModelKind kind) {
  const std::uint64_t d = config.backbone.d_model;
  const std::uint64_t s = config.backbone.subgraph_layers;
  auto subgraph = [&](std::uint64_t in) {
    // First encode layer from the raw features, later ones D -> D; every
    // fuse layer maps the 2D concatenation back to D.
    return in * d + d + (s - 1) * (d * d + d) + s * (2 * d * d + d);
  };
  const std::uint64_t block = 5 * d * d + 2 * d + (config.backbone.layer_norm ? 2 * d : 0);
  const std::uint64_t blocks = 2 * config.backbone.n_interleave + config.backbone.m_alltoken;
  const std::uint64_t backbone = subgraph(config.backbone.agent_dim) +
                                 subgraph(config.backbone.map_dim) + blocks * block;
  const std::uint64_t na = config.dims.max_agents;
  const std::uint64_t l = config.dims.lane_segments;
  const std::uint64_t k = config.modes;
  const std::uint64_t t = config.future_steps;
  switch (kind) {
    case ModelKind::pretrain:
      // VIF head, MRM head, mask token, mask position MLP (2 -> D -> D).
      return backbone + (d * d + d + d * na + na) + (d * d + d + 4 * l * d + 4 * l) + d +
             (2 * d + d) + (d * d + d);
    case ModelKind::trajectory:
      return backbone + 3 * (d * d + d) + 2 * k * t * d + 2 * k * t + 2 * (d * d + d) + d * k + k;
    case ModelKind::intention:
      return backbone + 3 * (d * d + d) + 3 * d + 3;
  }
  return backbone;
}

std::optional<ModelKind> infer_model_kind(const Checkpoint& ckpt) {
  auto has_prefix = [&](std::string_view prefix) {
    return std::any_of(ckpt.entries.begin(), ckpt.entries.end(),
                       [&](const CheckpointEntry& e) { return e.name.starts_with(prefix); });
  };
  if (has_prefix("head.traj.")) return ModelKind::trajectory;
  if (has_prefix("head.intent.")) return ModelKind::intention;
  if (has_prefix("head.vif.") || has_prefix("head.mrm.")) return ModelKind::pretrain;
  return std::nullopt;
}

GenDataResult run_gen_data(const RunConfig& config, const fs::path& out, const Logger& log) {
  const GenConfig gen = config.gen_config();
  GenResult result = generate(gen);
  std::vector<LabeledScene> scenes = std::move(result.scenes);
  const std::uint64_t cap = config.integer("gen.balance_cap");
  if (cap > 0) {
    Rng rng(derive_seed(config.seed(), "balance"));
    scenes = balance(scenes, cap, rng);
  }
  if (out.has_parent_path()) ensure_dir(out.parent_path());
  write_dataset(out, scenes);

  GenDataResult r;
  r.histogram = class_histogram(scenes);
  r.written = scenes.size();
  r.skipped = result.skipped;
  emit(log, "family " + std::string(to_string(gen.family)) + ", " + std::to_string(r.written) +
                " scenes written, " + std::to_string(r.skipped) + " skipped");
  for (std::size_t c = 0; c < kIntentionCount; ++c) {
    emit(log, std::string(to_string(static_cast<Intention>(c))) + " " +
                  std::to_string(r.histogram[c]));
  }
  return r;
}

PretrainRunResult run_pretrain_command(const RunConfig& config, const fs::path& data,
                                       const fs::path& out_dir, bool resume, const Logger& log) {
  const ModelConfig model_cfg = config.model_config();
  const PretrainConfig cfg = config.pretrain_config();
  const std::vector<Sample> all = load_samples(config, data, true);
  const Split split = split_indices(all.size(), cfg.held_out_fraction, cfg.seed);
  const std::vector<Sample> train = subset(all, split.train);
  const std::vector<Sample> held = subset(all, split.held_out);
  if (train.empty()) fail(ErrorKind::data, "pretrain: no training scenes after the held-out split");

  ensure_dir(out_dir);
  PretrainModel model(model_cfg, cfg.seed);
  OptimizerState opt = make_optimizer(model.store);
  PretrainRunResult result;
  if (resume) {
    const Checkpoint ckpt = read_checkpoint(out_dir / kPretrainCheckpoint);
    if (ckpt.config_hash != config.hash()) {
      fail(ErrorKind::usage, "resume: configuration differs from the run in " + out_dir.string());
    }
    load_parameters(model.store, ckpt);
    load_optimizer(model.store, opt, read_checkpoint(out_dir / kPretrainOptimizer));
    auto in = open_text(out_dir / kPretrainLog);
    result.log = read_pretrain_csv(in);
    if (result.log.size() > cfg.epochs) fail(ErrorKind::data, "resume: log has more epochs than configured");
  }
  config.save(out_dir / kConfigFileName);

  const std::size_t first = result.log.size();
  run_pretrain(model, opt, train, cfg, first, cfg.epochs, [&](const PretrainEpoch& e) {
    result.log.push_back(e);
    emit(log, "epoch " + std::to_string(e.epoch) + " l_vif " + fmt("%.6f", e.l_vif) + " l_mrm " +
                  fmt("%.6f", e.l_mrm) + " l_pre " + fmt("%.6f", e.l_pre) + " lr " +
                  fmt("%.3g", e.lr));
  });

  write_checkpoint(out_dir / kPretrainCheckpoint, snapshot(model.store, opt.step, config.hash()));
  write_checkpoint(out_dir / kPretrainOptimizer, snapshot_optimizer(model.store, opt));
  write_text(out_dir / kPretrainLog, [&](std::ostream& o) { write_pretrain_csv(o, result.log); });

  result.held_out_endpoint_error = std::numeric_limits<double>::quiet_NaN();
  result.held_out_vif_loss = std::numeric_limits<double>::quiet_NaN();
  if (!held.empty()) {
    result.held_out_endpoint_error = mrm_endpoint_error(model, held, cfg);
    result.held_out_vif_loss = vif_eval_loss(model, held);
  }
  const PretrainEpoch& last = result.log.back();
  write_text(out_dir / kPretrainSummary, [&](std::ostream& o) {
    o << "w_vif,w_mrm,l_vif,l_mrm,l_pre,held_out_endpoint_error,held_out_vif_loss\n";
    o << full(cfg.w_vif) << ',' << full(cfg.w_mrm) << ',' << full(last.l_vif) << ','
      << full(last.l_mrm) << ',' << full(last.l_pre) << ',' << full(result.held_out_endpoint_error)
      << ',' << full(result.held_out_vif_loss) << '\n';
  });
  emit(log, "held-out masked endpoint error " + fmt("%.4f", result.held_out_endpoint_error) +
                " m, held-out VIF loss " + fmt("%.6f", result.held_out_vif_loss));
  return result;
}

void run_pretrain_grid(const RunConfig& config, const fs::path& data, const fs::path& out_dir,
                       const std::vector<double>& w_vif, const std::vector<double>& w_mrm,
                       const Logger& log) {
  if (w_vif.empty() || w_mrm.empty()) fail(ErrorKind::usage, "pretrain grid: empty weight list");
  ensure_dir(out_dir);
  std::ostringstream summary;
  summary << "w_vif,w_mrm,l_vif,l_mrm,l_pre,held_out_endpoint_error,held_out_vif_loss\n";
  for (double wv : w_vif) {
    for (double wm : w_mrm) {
      RunConfig run = config;
      run.set("pretrain.w_vif", format_weight(wv));
      run.set("pretrain.w_mrm", format_weight(wm));
      const fs::path dir = out_dir / ("w_vif_" + format_weight(wv) + "_w_mrm_" + format_weight(wm));
      emit(log, "[" + format_weight(wv) + ", " + format_weight(wm) + "]");
      const PretrainRunResult r = run_pretrain_command(run, data, dir, false, log);
      const PretrainEpoch& last = r.log.back();
      summary << full(wv) << ',' << full(wm) << ',' << full(last.l_vif) << ',' << full(last.l_mrm)
              << ',' << full(last.l_pre) << ',' << full(r.held_out_endpoint_error) << ','
              << full(r.held_out_vif_loss) << '\n';
    }
  }
  write_text(out_dir / "grid_summary.csv", [&](std::ostream& o) { o << summary.str(); });
}

FinetuneRunResult run_finetune_command(const RunConfig& config, const fs::path& data,
                                       const std::optional<fs::path>& checkpoint,
                                       const fs::path& out_dir, const Logger& log) {
  const ModelConfig model_cfg = config.model_config();
  const FinetuneConfig cfg = config.finetune_config();
  const std::vector<Sample> all = load_samples(config, data, false);
  const Split split = split_indices(all.size(), cfg.val_fraction, cfg.seed);
  const std::vector<Sample> train = subset(all, split.train);
  const std::vector<Sample> val = subset(all, split.held_out);
  if (train.empty()) fail(ErrorKind::data, "finetune: no training scenes after the split");

  FinetuneModel model(model_cfg, cfg.task, cfg.seed);
  if (checkpoint) load_backbone(model, read_checkpoint(*checkpoint));
  ensure_dir(out_dir);
  config.save(out_dir / kConfigFileName);

  OptimizerState opt = make_optimizer(model.store);
  FinetuneRunResult result;
  result.log = run_finetune(model, opt, train, val, cfg, 0, cfg.epochs, config.workers(),
                            [&](const MetricRow& r) {
                              emit(log, "epoch " + std::to_string(r.epoch) + " " + r.split + " " +
                                            r.metric + " " + fmt("%.6f", r.value));
                            });
  if (val.empty()) {
    result.final_metrics = evaluate_rows(model, train, cfg.epochs, "train", config.workers());
  } else {
    for (const MetricRow& r : result.log) {
      if (r.epoch == cfg.epochs && r.split == "val") result.final_metrics.push_back(r);
    }
  }
  write_checkpoint(out_dir / kFinetuneCheckpoint, snapshot(model.store, opt.step, config.hash()));
  write_text(out_dir / kFinetuneLog, [&](std::ostream& o) { write_metric_csv(o, result.log); });
  print_metrics(log, cfg.task, result.final_metrics);
  return result;
}

std::vector<std::pair<PretrainMode, std::vector<MetricRow>>> run_ablation(
    const RunConfig& config, const fs::path& data, const fs::path& out_dir, const Logger& log) {
  const Task task = config.finetune_config().task;
  ensure_dir(out_dir);
  std::vector<std::pair<PretrainMode, std::vector<MetricRow>>> rows;
  for (PretrainMode mode : {PretrainMode::none, PretrainMode::vif, PretrainMode::mrm,
                            PretrainMode::both}) {
    const std::string name(to_string(mode));
    emit(log, "pre-train configuration: " + name);
    RunConfig run = config;
    run.set("finetune.pretrain_mode", name);
    std::optional<fs::path> ckpt;
    if (mode != PretrainMode::none) {
      const auto [wv, wm] = pretrain_weights(mode);
      run.set("pretrain.w_vif", format_weight(wv));
      run.set("pretrain.w_mrm", format_weight(wm));
      run_pretrain_command(run, data, out_dir / name / "pretrain", false, log);
      ckpt = out_dir / name / "pretrain" / kPretrainCheckpoint;
    }
    rows.emplace_back(mode,
                      run_finetune_command(run, data, ckpt, out_dir / name / "finetune", log)
                          .final_metrics);
  }
  const std::vector<std::string> columns = metric_columns(task);
  write_text(out_dir / "ablation.csv", [&](std::ostream& o) {
    o << "pretrain_mode";
    for (const std::string& c : columns) o << ',' << c;
    o << '\n';
    for (const auto& [mode, metrics] : rows) {
      o << to_string(mode);
      for (const std::string& c : columns) {
        o << ',';
        for (const MetricRow& r : metrics) {
          if (r.metric == c) o << full(r.value);
        }
      }
      o << '\n';
    }
  });
  emit(log, "ablation summary");
  for (const auto& [mode, metrics] : rows) {
    emit(log, std::string(to_string(mode)) + ":");
    print_metrics(log, task, metrics);
  }
  return rows;
}

std::vector<MetricRow> run_eval(const RunConfig& config, const fs::path& data,
                                const fs::path& checkpoint, const fs::path& out_dir,
                                const Logger& log) {
  if (!fs::exists(checkpoint)) fail(ErrorKind::data, "checkpoint '" + checkpoint.string() + "' not found");
  const Checkpoint ckpt = read_checkpoint(checkpoint);
  const ModelConfig model_cfg = config.model_config();
  const FinetuneConfig cfg = config.finetune_config();
  const auto kind = infer_model_kind(ckpt);
  if (!kind || *kind == ModelKind::pretrain ||
      (*kind == ModelKind::trajectory) != (cfg.task == Task::trajectory)) {
    fail(ErrorKind::data, "checkpoint does not hold a " + std::string(to_string(cfg.task)) +
                              " model");
  }
  if (ckpt.config_hash != config.hash()) {
    emit(log, "note: checkpoint was written under a different configuration");
  }
  FinetuneModel model(model_cfg, cfg.task, cfg.seed);
  load_parameters(model.store, ckpt);
  const std::vector<Sample> samples = load_samples(config, data, false);
  const std::vector<MetricRow> rows = evaluate_rows(model, samples, 0, "eval", config.workers());
  ensure_dir(out_dir);
  write_text(out_dir / kEvalLog, [&](std::ostream& o) { write_metric_csv(o, rows); });
  print_metrics(log, cfg.task, rows);
  return rows;
}

VifRenderResult run_vif_render(const RunConfig& config, const fs::path& scene_file,
                               std::size_t index, double resolution, const fs::path& out_prefix,
                               const Logger& log) {
  const std::vector<Scene> scenes = read_scenes(scene_file);
  if (index >= scenes.size()) {
    fail(ErrorKind::usage, "index " + std::to_string(index) + " out of range (" +
                               std::to_string(scenes.size()) + " scenes)");
  }
  if (!(resolution > 0.0)) fail(ErrorKind::usage, "resolution must be positive");
  const Scene& scene = scenes[index];
  const FieldParams field = config.field_params();
  const ModelConfig model_cfg = config.model_config();

  const Vec2 center = scene.agents.at(scene.target).positions.back();
  Region region{{center.x - 20.0, center.y - 20.0}, {center.x + 20.0, center.y + 20.0}};
  for (const AgentTrack& a : scene.agents) {
    const Vec2 p = a.positions.back();
    region.min = {std::min(region.min.x, p.x - 10.0), std::min(region.min.y, p.y - 10.0)};
    region.max = {std::max(region.max.x, p.x + 10.0), std::max(region.max.y, p.y + 10.0)};
  }
  const FieldGrid grid = render_field(scene, region, resolution, field);
  if (out_prefix.has_parent_path()) ensure_dir(out_prefix.parent_path());
  fs::path txt = out_prefix;
  txt += ".txt";
  fs::path pgm = out_prefix;
  pgm += ".pgm";
  write_text(txt, [&](std::ostream& o) { write_field_text(o, grid); });
  write_text(pgm, [&](std::ostream& o) { write_field_pgm(o, grid); });

  const Sample s = prepare_sample(scene, model_cfg.dims, &field);
  VifRenderResult r;
  r.width = grid.width;
  r.height = grid.height;
  emit(log, "grid " + std::to_string(grid.width) + " x " + std::to_string(grid.height) +
                " at " + fmt("%g", resolution) + " m");
  emit(log, "slot agent raw normalized");
  for (std::size_t k = 0; k < s.vif.valid.size(); ++k) {
    if (!s.vif.valid[k]) continue;
    r.slots.push_back(k);
    r.raw.push_back(s.vif.raw[k]);
    r.normalized.push_back(s.vif.forces[k]);
    emit(log, std::to_string(k) + " " + std::to_string(s.agents.source[k]) + " " +
                  fmt("%.9g", s.vif.raw[k]) + " " + fmt("%.6f", s.vif.forces[k]));
  }
  return r;
}

void run_inspect(const fs::path& checkpoint, const RunConfig* config, const Logger& log) {
  const Checkpoint ckpt = read_checkpoint(checkpoint);
  for (const CheckpointEntry& e : ckpt.entries) emit(log, e.name + " " + shape_string(e.shape));
  emit(log, "entries " + std::to_string(ckpt.entries.size()));
  emit(log, "total parameters " + std::to_string(ckpt.parameter_count()));
  emit(log, "step " + std::to_string(ckpt.step));
  if (config == nullptr) return;
  const auto kind = infer_model_kind(ckpt);
  if (!kind) return;
  const std::uint64_t expected = closed_form_parameter_count(config->model_config(), *kind);
  emit(log, "closed-form " + std::string(to_string(*kind)) + " count " + std::to_string(expected) +
                (expected == ckpt.parameter_count() ? " (match)" : " (MISMATCH)"));
}

}  // namespace pgsu
