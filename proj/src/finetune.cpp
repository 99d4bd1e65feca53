#include "pgsu/finetune.hpp"

#include <algorithm>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>

#include "pgsu/error.hpp"

namespace pgsu {

std::string_view to_string(Task task) {
  return task == Task::trajectory ? "trajectory" : "intention";
}

Task task_from_string(std::string_view name) {
  if (name == "trajectory") return Task::trajectory;
  if (name == "intention") return Task::intention;
  fail(ErrorKind::usage, "unknown task '" + std::string(name) + "'");
}

std::string_view to_string(PretrainMode mode) {
  switch (mode) {
    case PretrainMode::none: return "none";
    case PretrainMode::vif: return "vif";
    case PretrainMode::mrm: return "mrm";
    case PretrainMode::both: return "both";
  }
  return "none";
}

PretrainMode pretrain_mode_from_string(std::string_view name) {
  if (name == "none") return PretrainMode::none;
  if (name == "vif") return PretrainMode::vif;
  if (name == "mrm") return PretrainMode::mrm;
  if (name == "both") return PretrainMode::both;
  fail(ErrorKind::usage, "unknown pretrain mode '" + std::string(name) + "'");
}

std::pair<double, double> pretrain_weights(PretrainMode mode) {
  switch (mode) {
    case PretrainMode::none: return {0.0, 0.0};
    case PretrainMode::vif: return {10.0, 0.0};
    case PretrainMode::mrm: return {0.0, 1.0};
    case PretrainMode::both: return {10.0, 1.0};
  }
  return {0.0, 0.0};
}

std::size_t FinetuneConfig::effective_batch() const {
  if (batch_size != 0) return batch_size;
  return task == Task::trajectory ? kTrajectoryBatch : kIntentionBatch;
}

void FinetuneConfig::validate() const {
  if (epochs == 0) fail(ErrorKind::usage, "finetune: epochs must be positive");
  if (!(base_lr > 0.0)) fail(ErrorKind::usage, "finetune: base_lr must be positive");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) {
    fail(ErrorKind::usage, "finetune: val_fraction must be in [0, 1)");
  }
}

FinetuneModel::FinetuneModel(const ModelConfig& config, Task t, std::uint64_t seed)
    : backbone([&]() -> Backbone {
        Rng rng(derive_seed(seed, "init"));
        return Backbone(store, config.backbone, rng);
      }()),
      task(t),
      modes(config.modes),
      future_steps(config.future_steps) {
  Rng rng(derive_seed(seed, std::string("init.heads.") + std::string(to_string(t))));
  if (t == Task::trajectory) {
    trajectory = TrajectoryHead::create(store, config.backbone.d_model, config.modes,
                                        config.future_steps, config.backbone.coord_scale, rng);
  } else {
    intention = IntentionHead::create(store, config.backbone.d_model, rng);
  }
}

void load_backbone(FinetuneModel& model, const Checkpoint& ckpt) {
  load_parameters(model.store, ckpt, kBackbonePrefixes);
}

namespace {

TokenSet encode_batch(const FinetuneModel& model, std::span<const Sample* const> batch,
                      const ForwardContext& ctx) {
  std::vector<SceneInput> inputs;
  inputs.reserve(batch.size());
  for (const Sample* s : batch) inputs.push_back({&s->agents, &s->map, {}});
  return model.backbone.encode(inputs, ctx);
}

std::vector<const Sample*> pointers(std::span<const Sample> samples, std::size_t begin,
                                    std::size_t end) {
  std::vector<const Sample*> out;
  for (std::size_t i = begin; i < end; ++i) out.push_back(&samples[i]);
  return out;
}

/// Evaluates fn on consecutive batches, possibly in parallel, and
/// concatenates the per-batch outputs in order.
template <typename T, typename Fn>
std::vector<T> map_batches(std::span<const Sample> samples, std::size_t batch_size,
                           std::size_t workers, Fn fn) {
  const std::size_t n_batches = (samples.size() + batch_size - 1) / batch_size;
  std::vector<std::vector<T>> parts(n_batches);
  parallel_for(n_batches, workers, [&](std::size_t b) {
    NoGradGuard guard;
    const std::size_t begin = b * batch_size;
    const auto batch = pointers(samples, begin, std::min(samples.size(), begin + batch_size));
    parts[b] = fn(batch);
  });
  std::vector<T> out;
  for (auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

Tensor finetune_loss(const FinetuneModel& model, std::span<const Sample* const> batch,
                     const ForwardContext& ctx) {
  const TokenSet tokens = encode_batch(model, batch, ctx);
  const Tensor ego = tokens.ego_tokens();
  if (model.task == Task::trajectory) {
    std::vector<std::vector<Vec2>> truths;
    truths.reserve(batch.size());
    for (const Sample* s : batch) {
      if (s->future_local.size() != model.future_steps) {
        fail(ErrorKind::data, "finetune: sample future length does not match T_fut");
      }
      truths.push_back(s->future_local);
    }
    return prediction_loss(model.trajectory(ego, ctx), model.modes, model.future_steps, truths)
        .total;
  }
  std::vector<Intention> labels;
  labels.reserve(batch.size());
  for (const Sample* s : batch) labels.push_back(s->intention);
  return intention_loss(model.intention(ego, ctx), labels);
}

std::vector<TrajectoryPrediction> predict_trajectories(const FinetuneModel& model,
                                                       std::span<const Sample> samples,
                                                       std::size_t batch_size,
                                                       std::size_t workers) {
  if (model.task != Task::trajectory) fail(ErrorKind::usage, "model has no trajectory head");
  return map_batches<TrajectoryPrediction>(samples, batch_size, workers, [&](const auto& batch) {
    const ForwardContext ctx{};
    const TokenSet tokens = encode_batch(model, batch, ctx);
    return to_predictions(model.trajectory(tokens.ego_tokens(), ctx), model.modes,
                          model.future_steps);
  });
}

std::vector<IntentionPrediction> predict_intentions(const FinetuneModel& model,
                                                    std::span<const Sample> samples,
                                                    std::size_t batch_size, std::size_t workers) {
  if (model.task != Task::intention) fail(ErrorKind::usage, "model has no intention head");
  return map_batches<IntentionPrediction>(samples, batch_size, workers, [&](const auto& batch) {
    const ForwardContext ctx{};
    const TokenSet tokens = encode_batch(model, batch, ctx);
    return to_predictions(model.intention(tokens.ego_tokens(), ctx));
  });
}

TrajectoryMetrics evaluate_trajectory(const FinetuneModel& model, std::span<const Sample> samples,
                                      std::size_t workers) {
  if (samples.empty()) fail(ErrorKind::data, "evaluate: no samples");
  const auto preds = predict_trajectories(model, samples, 64, workers);
  TrajectoryMetrics m;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    m.min_ade += min_ade(preds[i], samples[i].future_local);
    m.min_fde += min_fde(preds[i], samples[i].future_local);
  }
  m.count = samples.size();
  m.min_ade /= static_cast<double>(m.count);
  m.min_fde /= static_cast<double>(m.count);
  return m;
}

ClassificationReport evaluate_intention(const FinetuneModel& model,
                                        std::span<const Sample> samples, std::size_t workers) {
  const auto preds = predict_intentions(model, samples, 256, workers);
  std::vector<Intention> predicted;
  std::vector<Intention> labels;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    predicted.push_back(preds[i].predicted());
    labels.push_back(samples[i].intention);
  }
  return classification_report(predicted, labels);
}

std::vector<MetricRow> evaluate_rows(const FinetuneModel& model, std::span<const Sample> samples,
                                     std::size_t epoch, const std::string& split,
                                     std::size_t workers) {
  std::vector<MetricRow> rows;
  if (model.task == Task::trajectory) {
    const TrajectoryMetrics m = evaluate_trajectory(model, samples, workers);
    rows.push_back({epoch, split, "min_ade", m.min_ade});
    rows.push_back({epoch, split, "min_fde", m.min_fde});
    return rows;
  }
  const ClassificationReport r = evaluate_intention(model, samples, workers);
  rows.push_back({epoch, split, "accuracy_overall", r.overall});
  for (std::size_t c = 0; c < kIntentionCount; ++c) {
    if (!r.per_class[c]) continue;
    rows.push_back({epoch, split,
                    "accuracy_" + std::string(to_string(static_cast<Intention>(c))),
                    *r.per_class[c]});
  }
  return rows;
}

std::vector<MetricRow> run_finetune(FinetuneModel& model, OptimizerState& opt,
                                    std::span<const Sample> train, std::span<const Sample> val,
                                    const FinetuneConfig& config, std::size_t first_epoch,
                                    std::size_t last_epoch, std::size_t workers,
                                    const std::function<void(const MetricRow&)>& on_row) {
  config.validate();
  if (train.empty()) fail(ErrorKind::data, "finetune: empty training set");
  if (config.task != model.task) fail(ErrorKind::usage, "finetune: task does not match model");
  for (const std::string& prefix : kBackbonePrefixes) {
    model.store.set_trainable_prefix(prefix, !config.freeze_backbone);
  }
  const std::size_t batch_size = config.effective_batch();
  const std::size_t per_epoch = (train.size() + batch_size - 1) / batch_size;
  const auto total = static_cast<std::uint64_t>(per_epoch * config.epochs);

  std::vector<MetricRow> log;
  auto emit = [&](MetricRow row) {
    if (on_row) on_row(row);
    log.push_back(std::move(row));
  };
  for (std::size_t epoch = first_epoch; epoch < last_epoch; ++epoch) {
    Rng shuffle_rng(derive_seed(config.seed, "finetune.shuffle", epoch));
    Rng dropout_rng(derive_seed(config.seed, "finetune.dropout", epoch));
    const std::vector<std::size_t> order = permutation(train.size(), shuffle_rng);
    const ForwardContext ctx{true, model.backbone.config().dropout, &dropout_rng};
    double loss_sum = 0.0;
    std::vector<const Sample*> batch;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      batch.clear();
      for (std::size_t i = start; i < std::min(order.size(), start + batch_size); ++i) {
        batch.push_back(&train[order[i]]);
      }
      model.store.zero_grad();
      const Tensor loss = finetune_loss(model, batch, ctx);
      loss_sum += loss.item();
      backward(loss);
      adam_step(model.store, opt, cosine_lr(opt.step, total, config.base_lr));
    }
    emit({epoch + 1, "train", "loss", loss_sum / static_cast<double>(per_epoch)});
    if (!val.empty()) {
      for (MetricRow& row : evaluate_rows(model, val, epoch + 1, "val", workers)) {
        emit(std::move(row));
      }
    }
  }
  return log;
}

void write_metric_csv(std::ostream& out, std::span<const MetricRow> rows) {
  out << "epoch,split,metric,value\n";
  for (const MetricRow& r : rows) {
    out << r.epoch << ',' << r.split << ',' << r.metric << ',' << fmt(r.value) << '\n';
  }
}

std::vector<MetricRow> read_metric_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "epoch,split,metric,value") {
    fail(ErrorKind::data, "metric log: missing header");
  }
  std::vector<MetricRow> rows;
  std::size_t number = 1;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (fields.size() != 4) {
      fail(ErrorKind::data, "metric log: malformed line " + std::to_string(number));
    }
    try {
      rows.push_back({std::stoull(fields[0]), fields[1], fields[2], std::stod(fields[3])});
    } catch (const std::exception&) {
      fail(ErrorKind::data, "metric log: malformed number on line " + std::to_string(number));
    }
  }
  return rows;
}

}  // namespace pgsu
