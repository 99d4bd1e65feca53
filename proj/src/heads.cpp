#include "pgsu/heads.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "pgsu/error.hpp"

namespace pgsu {

std::string_view to_string(Intention intention) {
  switch (intention) {
    case Intention::left: return "left";
    case Intention::straight: return "straight";
    case Intention::right: return "right";
  }
  return "straight";
}

Intention intention_from_string(std::string_view name) {
  if (name == "left") return Intention::left;
  if (name == "straight") return Intention::straight;
  if (name == "right") return Intention::right;
  fail(ErrorKind::data, "unknown intention '" + std::string(name) + "'");
}

VifHead VifHead::create(ParameterStore& store, std::size_t d_model, std::size_t n_agents,
                        Rng& rng) {
  return {Mlp::create(store, "head.vif.", {d_model, d_model, n_agents}, rng)};
}

Tensor VifHead::operator()(const Tensor& ego_tokens, const ForwardContext& ctx) const {
  return sigmoid(mlp(ego_tokens, ctx));
}

MrmHead MrmHead::create(ParameterStore& store, std::size_t d_model, std::size_t lane_segments,
                        double coord_scale, Rng& rng) {
  return {Mlp::create(store, "head.mrm.", {d_model, d_model, lane_segments * 4}, rng),
          coord_scale};
}

Tensor MrmHead::operator()(const Tensor& lane_tokens, const ForwardContext& ctx) const {
  return scale(mlp(lane_tokens, ctx), coord_scale);
}

TrajectoryHead TrajectoryHead::create(ParameterStore& store, std::size_t d_model,
                                      std::size_t modes, std::size_t steps, double coord_scale,
                                      Rng& rng) {
  TrajectoryHead h;
  const std::size_t d = d_model;
  h.trajectories = Mlp::create(store, "head.traj.reg.", {d, d, d, d, modes * steps * 2}, rng);
  h.probabilities = Mlp::create(store, "head.traj.cls.", {d, d, d, modes}, rng);
  h.modes = modes;
  h.steps = steps;
  h.coord_scale = coord_scale;
  return h;
}

TrajectoryHead::Output TrajectoryHead::operator()(const Tensor& ego_tokens,
                                                  const ForwardContext& ctx) const {
  return {scale(trajectories(ego_tokens, ctx), coord_scale),
          softmax(probabilities(ego_tokens, ctx))};
}

std::vector<TrajectoryPrediction> to_predictions(const TrajectoryHead::Output& out,
                                                 std::size_t modes, std::size_t steps) {
  const std::size_t batch = out.probs.dim(0);
  const std::size_t width = modes * steps * 2;
  std::vector<TrajectoryPrediction> preds(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    auto& p = preds[b];
    p.modes = modes;
    p.steps = steps;
    const auto tv = out.trajectories.values();
    const auto pv = out.probs.values();
    p.trajectories.assign(tv.begin() + static_cast<std::ptrdiff_t>(b * width),
                          tv.begin() + static_cast<std::ptrdiff_t>((b + 1) * width));
    p.mode_probs.assign(pv.begin() + static_cast<std::ptrdiff_t>(b * modes),
                        pv.begin() + static_cast<std::ptrdiff_t>((b + 1) * modes));
  }
  return preds;
}

namespace {
void check_truth(const TrajectoryPrediction& pred, std::span<const Vec2> truth) {
  if (truth.size() != pred.steps || pred.steps == 0)
    fail(ErrorKind::data, "ground truth has " + std::to_string(truth.size()) +
                              " points, prediction has " + std::to_string(pred.steps));
  if (pred.modes == 0) fail(ErrorKind::data, "prediction has no modes");
}
}  // namespace

std::size_t best_mode(const TrajectoryPrediction& pred, std::span<const Vec2> truth) {
  check_truth(pred, truth);
  const std::size_t last = pred.steps - 1;
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < pred.modes; ++k) {
    const double d = distance(pred.point(k, last), truth[last]);
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

PredictionLoss prediction_loss(const TrajectoryHead::Output& out, std::size_t modes,
                               std::size_t steps, std::span<const std::vector<Vec2>> truths) {
  const auto preds = to_predictions(out, modes, steps);
  if (truths.size() != preds.size())
    fail(ErrorKind::usage, "prediction_loss: one ground truth per batch row required");
  std::vector<std::size_t> winner_rows;
  std::vector<std::size_t> winners;
  std::vector<double> target;
  for (std::size_t b = 0; b < preds.size(); ++b) {
    const std::size_t k = best_mode(preds[b], truths[b]);
    winners.push_back(k);
    winner_rows.push_back(b * modes + k);
    for (const Vec2& p : truths[b]) {
      target.push_back(p.x);
      target.push_back(p.y);
    }
  }
  const std::size_t batch = preds.size();
  const Tensor per_mode = reshape(out.trajectories, {batch * modes, steps * 2});
  const Tensor chosen = gather_rows(per_mode, winner_rows);
  PredictionLoss loss;
  loss.regression = smooth_l1(chosen, Tensor::from({batch, steps * 2}, std::move(target)));
  loss.classification = cross_entropy_probs(out.probs, winners);
  loss.total = add(loss.regression, loss.classification);
  return loss;
}

double min_ade(const TrajectoryPrediction& pred, std::span<const Vec2> truth) {
  check_truth(pred, truth);
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < pred.modes; ++k) {
    double s = 0.0;
    for (std::size_t t = 0; t < pred.steps; ++t) s += distance(pred.point(k, t), truth[t]);
    best = std::min(best, s / static_cast<double>(pred.steps));
  }
  return best;
}

double min_fde(const TrajectoryPrediction& pred, std::span<const Vec2> truth) {
  check_truth(pred, truth);
  const std::size_t last = pred.steps - 1;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < pred.modes; ++k)
    best = std::min(best, distance(pred.point(k, last), truth[last]));
  return best;
}

Intention IntentionPrediction::predicted() const {
  std::size_t best = 0;
  for (std::size_t c = 1; c < kIntentionCount; ++c)
    if (probs[c] > probs[best]) best = c;
  return static_cast<Intention>(best);
}

IntentionHead IntentionHead::create(ParameterStore& store, std::size_t d_model, Rng& rng) {
  const std::size_t d = d_model;
  return {Mlp::create(store, "head.intent.", {d, d, d, d, kIntentionCount}, rng)};
}

Tensor IntentionHead::operator()(const Tensor& ego_tokens, const ForwardContext& ctx) const {
  return softmax(mlp(ego_tokens, ctx));
}

std::vector<IntentionPrediction> to_predictions(const Tensor& probs) {
  std::vector<IntentionPrediction> out(probs.dim(0));
  for (std::size_t b = 0; b < out.size(); ++b)
    for (std::size_t c = 0; c < kIntentionCount; ++c)
      out[b].probs[c] = probs[b * kIntentionCount + c];
  return out;
}

Tensor intention_loss(const Tensor& probs, std::span<const Intention> labels) {
  std::vector<std::size_t> targets;
  for (Intention l : labels) targets.push_back(static_cast<std::size_t>(l));
  return cross_entropy_probs(probs, targets, kIntentionLogEps);
}

ClassificationReport classification_report(std::span<const Intention> preds,
                                           std::span<const Intention> labels) {
  if (preds.size() != labels.size())
    fail(ErrorKind::usage, "classification_report: prediction/label count mismatch");
  if (preds.empty()) fail(ErrorKind::data, "classification_report: no samples");
  ClassificationReport r;
  std::array<std::size_t, kIntentionCount> correct{};
  std::size_t total_correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto c = static_cast<std::size_t>(labels[i]);
    ++r.class_counts[c];
    if (preds[i] == labels[i]) {
      ++correct[c];
      ++total_correct;
    }
  }
  for (std::size_t c = 0; c < kIntentionCount; ++c)
    if (r.class_counts[c] > 0)
      r.per_class[c] = static_cast<double>(correct[c]) / static_cast<double>(r.class_counts[c]);
  r.total = preds.size();
  r.overall = static_cast<double>(total_correct) / static_cast<double>(r.total);
  return r;
}

}  // namespace pgsu
