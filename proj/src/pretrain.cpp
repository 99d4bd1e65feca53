#include "pgsu/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "pgsu/error.hpp"

namespace pgsu {

void PretrainConfig::validate() const {
  if (!(w_vif >= 0.0) || !(w_mrm >= 0.0) || (w_vif == 0.0 && w_mrm == 0.0)) {
    fail(ErrorKind::usage, "pretrain: weights must be >= 0 and not both 0");
  }
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) {
    fail(ErrorKind::usage, "pretrain: mask_ratio must be in (0, 1)");
  }
  if (epochs == 0 || batch_size == 0) fail(ErrorKind::usage, "pretrain: epochs and batch_size must be positive");
  if (!(base_lr > 0.0)) fail(ErrorKind::usage, "pretrain: base_lr must be positive");
  if (!(held_out_fraction >= 0.0 && held_out_fraction < 1.0)) {
    fail(ErrorKind::usage, "pretrain: held_out_fraction must be in [0, 1)");
  }
}

std::size_t mask_count(std::size_t valid_lanes, double ratio) {
  if (valid_lanes == 0) return 0;
  const auto n = static_cast<std::size_t>(std::lround(ratio * static_cast<double>(valid_lanes)));
  return std::clamp<std::size_t>(n, 1, valid_lanes);
}

MaskedLanes mask_lanes(const MapFeatureTensor& map, double ratio, Rng& rng) {
  std::vector<std::size_t> candidates;
  for (std::size_t j = 0; j < map.count; ++j) {
    if (map.valid[j]) candidates.push_back(j);
  }
  if (candidates.empty()) fail(ErrorKind::data, "mask_lanes: no valid lanes");
  const std::size_t n = mask_count(candidates.size(), ratio);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = i + rng.index(candidates.size() - i);
    std::swap(candidates[i], candidates[j]);
  }
  MaskedLanes out;
  out.lanes.assign(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(n));
  std::sort(out.lanes.begin(), out.lanes.end());
  out.masked = map;
  for (std::size_t j : out.lanes) out.anchors.push_back(lane_anchor(map, j));
  for (std::size_t j : out.lanes) {
    auto row = out.masked.row(j);
    std::fill(row.begin(), row.end(), 0.0);
  }
  return out;
}

Vec2 lane_anchor(const MapFeatureTensor& map, std::size_t slot) {
  Vec2 sum;
  for (std::size_t t = 0; t < map.steps; ++t) {
    sum.x += map.at(slot, t, 0) + map.at(slot, t, 2);
    sum.y += map.at(slot, t, 1) + map.at(slot, t, 3);
  }
  return (0.5 / static_cast<double>(map.steps)) * sum;
}

Tensor vif_loss(const Tensor& pred, std::span<const VifTarget* const> targets) {
  const std::size_t batch = targets.size();
  if (pred.rank() != 2 || pred.dim(0) != batch) {
    fail(ErrorKind::internal, "vif_loss: prediction shape " + shape_string(pred.shape()) +
                                  " does not match batch " + std::to_string(batch));
  }
  const std::size_t n = pred.dim(1);
  std::vector<double> target(batch * n, 0.0);
  std::vector<double> weight(batch * n, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    const VifTarget& t = *targets[b];
    if (t.forces.size() != n || t.valid.size() != n) {
      fail(ErrorKind::internal, "vif_loss: target length mismatch");
    }
    const auto valid = static_cast<std::size_t>(std::count(t.valid.begin(), t.valid.end(), 1));
    if (valid == 0) continue;
    for (std::size_t i = 0; i < n; ++i) {
      if (!t.valid[i]) continue;
      target[b * n + i] = t.forces[i];
      weight[b * n + i] = 1.0 / (static_cast<double>(valid) * static_cast<double>(batch));
    }
  }
  const Tensor diff = sub(pred, Tensor::from({batch, n}, std::move(target)));
  return sum(mul(mul(diff, diff), Tensor::from({batch, n}, std::move(weight))));
}

Tensor mrm_loss(const Tensor& pred, const Tensor& truth) {
  if (pred.rank() != 2 || pred.shape() != truth.shape() || pred.dim(1) % 4 != 0) {
    fail(ErrorKind::internal, "mrm_loss: expected matching [n, L*4] shapes");
  }
  const std::size_t lanes = pred.dim(0);
  if (lanes == 0) fail(ErrorKind::data, "mrm_loss: empty masked set");
  const std::size_t segments = pred.dim(1) / 4;
  const Tensor points = reshape(sub(pred, truth), {lanes * segments * 2, 2});
  return scale(sum(row_norm(points)), 1.0 / static_cast<double>(lanes * segments));
}

Tensor lane_coordinates(const MapFeatureTensor& map, std::span<const std::size_t> slots) {
  std::vector<double> values;
  values.reserve(slots.size() * map.steps * 4);
  for (std::size_t j : slots) {
    for (std::size_t t = 0; t < map.steps; ++t) {
      for (std::size_t k = 0; k < 4; ++k) values.push_back(map.at(j, t, k));
    }
  }
  return Tensor::from({slots.size(), map.steps * 4}, std::move(values));
}

namespace {

Rng init_rng(std::uint64_t seed) { return Rng(derive_seed(seed, "init")); }

}  // namespace

PretrainModel::PretrainModel(const ModelConfig& config, std::uint64_t seed)
    : backbone([&]() -> Backbone {
        Rng rng = init_rng(seed);
        return Backbone(store, config.backbone, rng);
      }()) {
  // Heads draw from their own stream so the backbone init does not depend
  // on which heads exist.
  Rng rng(derive_seed(seed, "init.heads.pretrain"));
  vif = VifHead::create(store, config.backbone.d_model, config.dims.max_agents, rng);
  mrm = MrmHead::create(store, config.backbone.d_model, config.dims.lane_segments,
                        config.backbone.coord_scale, rng);
  mask_token = store.add_constant("pretrain.mask_token", {config.backbone.d_model}, 0.0);
  mask_position = Mlp::create(store, "pretrain.mask_pos.",
                              {2, config.backbone.d_model, config.backbone.d_model}, rng);
}

double combine_losses(double w_vif, double w_mrm, double l_vif, double l_mrm) {
  return w_vif * l_vif + w_mrm * l_mrm;
}

MaskedEncoding encode_masked(const PretrainModel& model, std::span<const Sample* const> batch,
                             bool masking, double mask_ratio, Rng& mask_rng,
                             const ForwardContext& ctx) {
  MaskedEncoding out;
  out.masks.resize(batch.size());
  std::vector<SceneInput> inputs(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    inputs[b].agents = &batch[b]->agents;
    inputs[b].map = &batch[b]->map;
    if (masking && batch[b]->map.valid_count() > 0) {
      out.masks[b] = mask_lanes(batch[b]->map, mask_ratio, mask_rng);
      inputs[b].map = &out.masks[b].masked;
      inputs[b].masked_lanes = out.masks[b].lanes;
    }
  }
  // Mask embedding per masked lane: shared token plus its anchor position.
  const double cs = model.backbone.config().coord_scale;
  std::vector<double> anchors;
  for (const MaskedLanes& m : out.masks) {
    for (Vec2 a : m.anchors) {
      anchors.push_back(a.x / cs);
      anchors.push_back(a.y / cs);
    }
  }
  const std::size_t n_masked = anchors.size() / 2;
  Tensor mask_embedding;
  if (n_masked > 0) {
    std::vector<std::size_t> all(n_masked);
    for (std::size_t i = 0; i < n_masked; ++i) all[i] = i;
    mask_embedding = add_to_rows(
        model.mask_position(Tensor::from({n_masked, 2}, std::move(anchors)), ctx),
        model.mask_token, all);
  }
  out.tokens = model.backbone.encode(inputs, ctx, mask_embedding);
  return out;
}

PretrainLossTensors pretrain_losses(const PretrainModel& model,
                                    std::span<const Sample* const> batch,
                                    const PretrainConfig& config, Rng& mask_rng,
                                    const ForwardContext& ctx) {
  const MaskedEncoding enc =
      encode_masked(model, batch, config.w_mrm > 0.0, config.mask_ratio, mask_rng, ctx);
  const TokenSet& tokens = enc.tokens;

  PretrainLossTensors out;
  std::vector<const VifTarget*> targets;
  targets.reserve(batch.size());
  for (const Sample* s : batch) {
    if (s->vif.forces.empty()) fail(ErrorKind::internal, "pretrain: sample has no VIF target");
    targets.push_back(&s->vif);
  }
  out.l_vif = vif_loss(model.vif(tokens.ego_tokens(), ctx), targets);

  const std::size_t width = batch.empty() ? 0 : batch.front()->map.steps * 4;
  std::vector<std::size_t> rows;
  std::vector<Tensor> truths;
  std::vector<double> anchor_tiles;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const MaskedLanes& m = enc.masks[b];
    if (m.lanes.empty()) continue;
    for (std::size_t j : m.lanes) rows.push_back(tokens.map_row(b, j));
    for (Vec2 a : m.anchors) {
      for (std::size_t k = 0; k < width; k += 2) {
        anchor_tiles.push_back(a.x);
        anchor_tiles.push_back(a.y);
      }
    }
    truths.push_back(lane_coordinates(batch[b]->map, m.lanes));
  }
  out.masked_lanes = rows.size();
  out.l_pre = scale(out.l_vif, config.w_vif);
  if (!rows.empty()) {
    const Tensor pred = add(model.mrm(tokens.map_tokens_at(rows), ctx),
                            Tensor::from({rows.size(), width}, std::move(anchor_tiles)));
    out.l_mrm = mrm_loss(pred, concat(truths, 0));
    out.l_pre = add(out.l_pre, scale(out.l_mrm, config.w_mrm));
  }
  return out;
}

StepLosses pretrain_step(PretrainModel& model, OptimizerState& opt,
                         std::span<const Sample* const> batch, const PretrainConfig& config,
                         Rng& mask_rng, Rng& dropout_rng, double lr) {
  const ForwardContext ctx{true, model.backbone.config().dropout, &dropout_rng};
  model.store.zero_grad();
  PretrainLossTensors losses = pretrain_losses(model, batch, config, mask_rng, ctx);
  StepLosses out;
  out.l_vif = losses.l_vif.item();
  out.l_mrm = losses.l_mrm.defined() ? losses.l_mrm.item() : 0.0;
  out.l_pre = losses.l_pre.item();
  out.masked_lanes = losses.masked_lanes;
  backward(losses.l_pre);
  adam_step(model.store, opt, lr);
  return out;
}

std::uint64_t pretrain_total_steps(std::size_t train_size, const PretrainConfig& config) {
  const std::size_t per_epoch = (train_size + config.batch_size - 1) / config.batch_size;
  return static_cast<std::uint64_t>(per_epoch * config.epochs);
}

std::vector<PretrainEpoch> run_pretrain(PretrainModel& model, OptimizerState& opt,
                                        std::span<const Sample> train,
                                        const PretrainConfig& config, std::size_t first_epoch,
                                        std::size_t last_epoch,
                                        const std::function<void(const PretrainEpoch&)>& on_epoch) {
  config.validate();
  if (train.empty()) fail(ErrorKind::data, "pretrain: empty training set");
  const std::uint64_t total = pretrain_total_steps(train.size(), config);
  std::vector<PretrainEpoch> log;
  for (std::size_t epoch = first_epoch; epoch < last_epoch; ++epoch) {
    Rng shuffle_rng(derive_seed(config.seed, "pretrain.shuffle", epoch));
    Rng mask_rng(derive_seed(config.seed, "pretrain.masking", epoch));
    Rng dropout_rng(derive_seed(config.seed, "pretrain.dropout", epoch));
    const std::vector<std::size_t> order = permutation(train.size(), shuffle_rng);

    PretrainEpoch row;
    row.epoch = epoch + 1;
    row.lr = cosine_lr(opt.step, total, config.base_lr);
    double sum_vif = 0.0;
    double sum_mrm = 0.0;
    std::size_t steps = 0;
    std::vector<const Sample*> batch;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      batch.clear();
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      for (std::size_t i = start; i < end; ++i) batch.push_back(&train[order[i]]);
      const double lr = cosine_lr(opt.step, total, config.base_lr);
      const StepLosses l = pretrain_step(model, opt, batch, config, mask_rng, dropout_rng, lr);
      sum_vif += l.l_vif;
      sum_mrm += l.l_mrm;
      ++steps;
    }
    row.l_vif = sum_vif / static_cast<double>(steps);
    row.l_mrm = sum_mrm / static_cast<double>(steps);
    row.l_pre = combine_losses(config.w_vif, config.w_mrm, row.l_vif, row.l_mrm);
    log.push_back(row);
    if (on_epoch) on_epoch(row);
  }
  return log;
}

double mrm_endpoint_error(const PretrainModel& model, std::span<const Sample> samples,
                          const PretrainConfig& config, std::size_t batch_size) {
  NoGradGuard guard;
  PretrainConfig masking = config;
  masking.w_mrm = std::max(config.w_mrm, 1.0);
  Rng mask_rng(derive_seed(config.seed, "pretrain.heldout.masking"));
  const ForwardContext ctx{};
  double total = 0.0;
  std::size_t lanes = 0;
  std::vector<const Sample*> batch;
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    batch.clear();
    for (std::size_t i = start; i < std::min(samples.size(), start + batch_size); ++i) {
      batch.push_back(&samples[i]);
    }
    const PretrainLossTensors l = pretrain_losses(model, batch, masking, mask_rng, ctx);
    if (l.masked_lanes == 0) continue;
    // l_mrm averages two endpoint distances per segment.
    total += 0.5 * l.l_mrm.item() * static_cast<double>(l.masked_lanes);
    lanes += l.masked_lanes;
  }
  if (lanes == 0) fail(ErrorKind::data, "mrm_endpoint_error: no maskable lanes");
  return total / static_cast<double>(lanes);
}

double vif_eval_loss(const PretrainModel& model, std::span<const Sample> samples,
                     std::size_t batch_size) {
  NoGradGuard guard;
  if (samples.empty()) fail(ErrorKind::data, "vif_eval_loss: no samples");
  const ForwardContext ctx{};
  double total = 0.0;
  std::vector<const Sample*> batch;
  std::vector<SceneInput> inputs;
  std::vector<const VifTarget*> targets;
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    batch.clear();
    inputs.clear();
    targets.clear();
    for (std::size_t i = start; i < std::min(samples.size(), start + batch_size); ++i) {
      inputs.push_back({&samples[i].agents, &samples[i].map, {}});
      targets.push_back(&samples[i].vif);
    }
    const TokenSet tokens = model.backbone.encode(inputs, ctx);
    total += vif_loss(model.vif(tokens.ego_tokens(), ctx), targets).item() *
             static_cast<double>(inputs.size());
  }
  return total / static_cast<double>(samples.size());
}

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void write_pretrain_csv(std::ostream& out, std::span<const PretrainEpoch> log) {
  out << "epoch,l_vif,l_mrm,l_pre,lr\n";
  for (const PretrainEpoch& r : log) {
    out << r.epoch << ',' << fmt(r.l_vif) << ',' << fmt(r.l_mrm) << ',' << fmt(r.l_pre) << ','
        << fmt(r.lr) << '\n';
  }
}

std::vector<PretrainEpoch> read_pretrain_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "epoch,l_vif,l_mrm,l_pre,lr") {
    fail(ErrorKind::data, "pretrain log: missing header");
  }
  std::vector<PretrainEpoch> log;
  std::size_t number = 1;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    std::istringstream ss(line);
    PretrainEpoch r;
    char c1 = 0, c2 = 0, c3 = 0, c4 = 0;
    if (!(ss >> r.epoch >> c1 >> r.l_vif >> c2 >> r.l_mrm >> c3 >> r.l_pre >> c4 >> r.lr) ||
        c1 != ',' || c2 != ',' || c3 != ',' || c4 != ',') {
      fail(ErrorKind::data, "pretrain log: malformed line " + std::to_string(number));
    }
    log.push_back(r);
  }
  return log;
}

}  // namespace pgsu
