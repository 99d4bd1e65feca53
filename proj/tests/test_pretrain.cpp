#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "pgsu/checkpoint.hpp"
#include "pgsu/error.hpp"
#include "pgsu/pretrain.hpp"
#include "support.hpp"

using namespace pgsu;
using pgsu::test::random_scene;

namespace {

ModelConfig small_model() {
  ModelConfig m;
  m.dims.max_agents = 8;
  m.dims.max_lanes = 6;
  m.backbone.d_model = 16;
  return m;
}

std::vector<Sample> random_samples(std::size_t n, std::uint64_t seed,
                                   const ModelConfig& model = small_model()) {
  Rng rng(seed);
  const FieldParams field;
  std::vector<Sample> out;
  for (std::size_t i = 0; i < n; ++i) {
    const Scene s = random_scene(rng, 3 + rng.index(8), 1 + rng.index(8), 20, 30.0);
    out.push_back(prepare_sample(s, model.dims, &field));
  }
  return out;
}

std::vector<const Sample*> pointers(std::span<const Sample> samples) {
  std::vector<const Sample*> p;
  for (const Sample& s : samples) p.push_back(&s);
  return p;
}

VifTarget target(std::vector<double> forces, std::vector<std::uint8_t> valid) {
  VifTarget t;
  t.forces = std::move(forces);
  t.valid = std::move(valid);
  t.raw = t.forces;
  return t;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

bool same_parameters(const ParameterStore& a, const ParameterStore& b) {
  if (a.params().size() != b.params().size()) return false;
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    const auto va = a.params()[i].tensor.values();
    const auto vb = b.params()[i].tensor.values();
    if (!std::equal(va.begin(), va.end(), vb.begin(), vb.end())) {
      MESSAGE("parameter differs: " << a.params()[i].name);
      return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("mask_count examples") {
  CHECK(mask_count(10, 0.5) == 5);
  CHECK(mask_count(1, 0.5) == 1);
  CHECK(mask_count(3, 0.5) == 2);
  CHECK(mask_count(4, 0.01) == 1);
  CHECK(mask_count(0, 0.5) == 0);
}

TEST_CASE("mask_lanes selects valid lanes deterministically") {
  const auto samples = random_samples(20, 3);
  for (const Sample& s : samples) {
    const MapFeatureTensor& map = s.map;
    Rng r1(77);
    Rng r2(77);
    const MaskedLanes a = mask_lanes(map, 0.5, r1);
    const MaskedLanes b = mask_lanes(map, 0.5, r2);
    CHECK(a.lanes == b.lanes);
    CHECK(a.lanes.size() == mask_count(map.valid_count(), 0.5));
    CHECK(std::is_sorted(a.lanes.begin(), a.lanes.end()));
    REQUIRE(a.anchors.size() == a.lanes.size());
    for (std::size_t i = 0; i < a.lanes.size(); ++i) {
      const std::size_t j = a.lanes[i];
      CHECK(map.valid[j]);
      CHECK(a.masked.valid[j]);
      for (double v : a.masked.row(j)) CHECK(v == 0.0);
      CHECK(a.anchors[i].x == lane_anchor(map, j).x);
      CHECK(a.anchors[i].y == lane_anchor(map, j).y);
    }
    for (std::size_t j = 0; j < map.count; ++j) {
      if (std::find(a.lanes.begin(), a.lanes.end(), j) != a.lanes.end()) continue;
      CHECK(max_abs_diff(a.masked.row(j), map.row(j)) == 0.0);
    }
  }
  MapFeatureTensor empty = samples[0].map;
  std::fill(empty.valid.begin(), empty.valid.end(), 0);
  Rng rng(1);
  CHECK_THROWS_AS(mask_lanes(empty, 0.5, rng), Error);
}

TEST_CASE("lane_anchor averages segment endpoints") {
  const auto samples = random_samples(5, 4);
  const MapFeatureTensor& map = samples[0].map;
  for (std::size_t j = 0; j < map.count; ++j) {
    if (!map.valid[j]) continue;
    double sx = 0.0;
    double sy = 0.0;
    for (std::size_t t = 0; t < map.steps; ++t) {
      sx += map.at(j, t, 0) + map.at(j, t, 2);
      sy += map.at(j, t, 1) + map.at(j, t, 3);
    }
    const Vec2 a = lane_anchor(map, j);
    CHECK(a.x == doctest::Approx(sx / (2.0 * static_cast<double>(map.steps))));
    CHECK(a.y == doctest::Approx(sy / (2.0 * static_cast<double>(map.steps))));
  }
}

TEST_CASE("vif_loss examples") {
  const std::vector<std::uint8_t> valid{0, 1, 1, 1, 1, 0};
  const VifTarget t = target({0, 0.2, 0.4, 0.6, 1.0, 0}, valid);
  const std::vector<const VifTarget*> one{&t};

  CHECK(vif_loss(Tensor::from({1, 6}, t.forces), one).item() == 0.0);
  const Tensor off = Tensor::from({1, 6}, {0.7, 0.3, 0.5, 0.7, 1.1, -3.0});
  CHECK(vif_loss(off, one).item() == doctest::Approx(0.01).epsilon(1e-12));
  // Slot 0 and padding do not matter.
  const Tensor off2 = Tensor::from({1, 6}, {-9.0, 0.3, 0.5, 0.7, 1.1, 9.0});
  CHECK(vif_loss(off2, one).item() == vif_loss(off, one).item());

  // Batch average of per-scene means.
  const VifTarget u = target({0, 1, 0, 0, 0, 0}, {0, 1, 0, 0, 0, 0});
  const std::vector<const VifTarget*> two{&t, &u};
  const Tensor both = Tensor::from({2, 6}, {0, 0.2, 0.4, 0.6, 1.0, 0, 0, 0.5, 0, 0, 0, 0});
  CHECK(vif_loss(both, two).item() == doctest::Approx(0.5 * 0.25).epsilon(1e-12));

  // A scene with no valid agents contributes zero.
  const VifTarget none = target({0, 0, 0, 0, 0, 0}, {0, 0, 0, 0, 0, 0});
  const std::vector<const VifTarget*> empty{&none};
  CHECK(vif_loss(off, empty).item() == 0.0);
}

TEST_CASE("mrm_loss examples") {
  const std::size_t lanes = 3;
  const std::size_t segments = 4;
  Rng rng(6);
  std::vector<double> truth(lanes * segments * 4);
  for (double& v : truth) v = rng.uniform(-20, 20);
  std::vector<double> shifted = truth;
  for (std::size_t i = 0; i < shifted.size(); i += 2) {
    shifted[i] += 3.0;
    shifted[i + 1] += 4.0;
  }
  const Tensor t = Tensor::from({lanes, segments * 4}, truth);
  CHECK(mrm_loss(t, t).item() == 0.0);
  CHECK(mrm_loss(Tensor::from({lanes, segments * 4}, shifted), t).item() ==
        doctest::Approx(10.0).epsilon(1e-12));

  // Reordering lanes in both prediction and truth leaves the loss alone.
  std::vector<double> pred(truth.size());
  for (double& v : pred) v = rng.uniform(-20, 20);
  const double base = mrm_loss(Tensor::from({lanes, segments * 4}, pred), t).item();
  auto swap_rows = [&](std::vector<double> v) {
    const std::size_t w = segments * 4;
    std::swap_ranges(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(w),
                     v.begin() + static_cast<std::ptrdiff_t>(2 * w));
    return v;
  };
  CHECK(mrm_loss(Tensor::from({lanes, segments * 4}, swap_rows(pred)),
                 Tensor::from({lanes, segments * 4}, swap_rows(truth)))
            .item() == doctest::Approx(base).epsilon(1e-14));

  CHECK_THROWS_AS(mrm_loss(Tensor::zeros({0, 16}), Tensor::zeros({0, 16})), Error);
}

TEST_CASE("combine_losses examples") {
  CHECK(combine_losses(10, 1, 0.0175, 0.0329) == doctest::Approx(0.2079).epsilon(1e-12));
  CHECK(combine_losses(1, 0, 0.3, 0.7) == 0.3);
  CHECK(combine_losses(0, 1, 0.3, 0.7) == 0.7);
}

TEST_CASE("VIF targets equal a direct safety field computation") {
  Rng rng(11);
  const FieldParams field;
  const FeatureDims dims = small_model().dims;
  for (int trial = 0; trial < 20; ++trial) {
    const Scene s = random_scene(rng, 2 + rng.index(10), 2);
    const Sample sample = prepare_sample(s, dims, &field);
    const AgentTrack& ego = s.agents[s.target];
    const OrientedBox box = ego_box(ego, make_frame(s).frame.heading);
    std::vector<double> raw(dims.max_agents, 0.0);
    std::vector<std::uint8_t> valid(dims.max_agents, 0);
    for (std::size_t k = 1; k < sample.agents.source.size(); ++k) {
      raw[k] = virtual_force(make_source(s.agents[sample.agents.source[k]], field), box, field);
      valid[k] = 1;
    }
    double lo = 1e300;
    double hi = -1e300;
    for (std::size_t k = 0; k < raw.size(); ++k) {
      if (!valid[k]) continue;
      lo = std::min(lo, raw[k]);
      hi = std::max(hi, raw[k]);
    }
    REQUIRE(sample.vif.forces.size() == dims.max_agents);
    for (std::size_t k = 0; k < raw.size(); ++k) {
      CHECK(sample.vif.valid[k] == valid[k]);
      if (!valid[k]) {
        CHECK(sample.vif.forces[k] == 0.0);
        continue;
      }
      CHECK(std::abs(sample.vif.raw[k] - raw[k]) <= 1e-12 * std::max(1.0, raw[k]));
      if (hi > lo) CHECK(std::abs(sample.vif.forces[k] - (raw[k] - lo) / (hi - lo)) <= 1e-12);
    }
  }
}

TEST_CASE("masked lanes carry only their anchor forward") {
  const ModelConfig cfg = small_model();
  PretrainModel model(cfg, 5);
  auto samples = random_samples(6, 21);
  Rng pick(1);
  for (Sample& original : samples) {
    if (original.map.valid_count() == 0) continue;
    Rng r1(99);
    const MaskedLanes m = mask_lanes(original.map, 0.5, r1);
    // Point-reflect every masked lane through its anchor: new geometry, same
    // anchor.
    Sample altered = original;
    for (std::size_t i = 0; i < m.lanes.size(); ++i) {
      const std::size_t j = m.lanes[i];
      for (std::size_t t = 0; t < altered.map.steps; ++t) {
        for (std::size_t k = 0; k < 4; ++k) {
          const double a = (k % 2 == 0) ? m.anchors[i].x : m.anchors[i].y;
          altered.map.at(j, t, k) = 2.0 * a - original.map.at(j, t, k);
        }
        altered.map.at(j, t, 4) = pick.uniform();
        altered.map.at(j, t, 5) = pick.uniform();
      }
      CHECK(max_abs_diff(altered.map.row(j), original.map.row(j)) > 0.0);
    }
    const Sample* a_ptr = &original;
    const Sample* b_ptr = &altered;
    Rng ra(99);
    Rng rb(99);
    const MaskedEncoding ea = encode_masked(model, {&a_ptr, 1}, true, 0.5, ra, {});
    const MaskedEncoding eb = encode_masked(model, {&b_ptr, 1}, true, 0.5, rb, {});
    REQUIRE(ea.masks[0].lanes == m.lanes);
    REQUIRE(eb.masks[0].lanes == m.lanes);
    CHECK(max_abs_diff(ea.masks[0].masked.data, eb.masks[0].masked.data) == 0.0);
    CHECK(max_abs_diff(ea.tokens.combined.values(), eb.tokens.combined.values()) <= 1e-12);
  }
}

TEST_CASE("masked-token gradients reach the backbone") {
  const ModelConfig cfg = small_model();
  PretrainModel model(cfg, 2);
  const auto samples = random_samples(4, 8);
  const auto batch = pointers(samples);
  PretrainConfig pc;
  pc.w_vif = 0.0;
  pc.w_mrm = 1.0;
  Rng mask_rng(3);
  model.store.zero_grad();
  const PretrainLossTensors l = pretrain_losses(model, batch, pc, mask_rng, {});
  REQUIRE(l.masked_lanes > 0);
  backward(l.l_pre);
  for (const char* name : {"pretrain.mask_token", "subgraph.map.0.encode.weight"}) {
    const Parameter* p = model.store.find(name);
    REQUIRE(p != nullptr);
    double mass = 0.0;
    for (double g : p->tensor.grad_view()) mass += std::abs(g);
    CHECK(mass > 0.0);
  }
  // VIF head is unused with w_vif = 0.
  for (double g : model.store.find("head.vif.1.weight")->tensor.grad_view()) CHECK(g == 0.0);
}

TEST_CASE("pretrain masks only when the MRM weight is positive") {
  PretrainModel model(small_model(), 2);
  const auto samples = random_samples(3, 8);
  const auto batch = pointers(samples);
  PretrainConfig pc;
  pc.w_vif = 1.0;
  pc.w_mrm = 0.0;
  Rng mask_rng(3);
  const PretrainLossTensors l = pretrain_losses(model, batch, pc, mask_rng, {});
  CHECK(l.masked_lanes == 0);
  CHECK_FALSE(l.l_mrm.defined());
  CHECK(l.l_pre.item() == l.l_vif.item());
}

TEST_CASE("pretrain log: epochs, decomposition and CSV round trip") {
  const ModelConfig cfg = small_model();
  PretrainModel model(cfg, 1);
  const auto samples = random_samples(4, 12);
  PretrainConfig pc;
  pc.epochs = 60;
  pc.batch_size = 4;
  OptimizerState opt = make_optimizer(model.store);
  const auto log = run_pretrain(model, opt, samples, pc, 0, pc.epochs);
  REQUIRE(log.size() == 60);
  CHECK(opt.step == 60);
  for (std::size_t i = 0; i < log.size(); ++i) {
    CHECK(log[i].epoch == i + 1);
    CHECK(std::abs(log[i].l_pre - combine_losses(pc.w_vif, pc.w_mrm, log[i].l_vif,
                                                 log[i].l_mrm)) <= 1e-9);
  }
  CHECK(log.back().l_pre < log.front().l_pre);
  CHECK(log.front().lr == pc.base_lr);

  std::stringstream ss;
  write_pretrain_csv(ss, log);
  const std::string text = ss.str();
  CHECK(std::count(text.begin(), text.end(), '\n') == 61);
  const auto back = read_pretrain_csv(ss);
  REQUIRE(back.size() == log.size());
  for (std::size_t i = 0; i < log.size(); ++i) {
    CHECK(back[i].l_vif == log[i].l_vif);
    CHECK(back[i].l_mrm == log[i].l_mrm);
    CHECK(back[i].l_pre == log[i].l_pre);
    CHECK(back[i].lr == log[i].lr);
  }
  std::istringstream bad("epoch,l_vif,l_mrm,l_pre,lr\n1,2,3\n");
  CHECK_THROWS_AS(read_pretrain_csv(bad), Error);
}

TEST_CASE("resumed pretraining matches an uninterrupted run bit for bit") {
  const ModelConfig cfg = small_model();
  const auto samples = random_samples(10, 13);
  PretrainConfig pc;
  pc.epochs = 4;
  pc.batch_size = 4;
  pc.seed = 17;

  PretrainModel full(cfg, pc.seed);
  OptimizerState full_opt = make_optimizer(full.store);
  const auto full_log = run_pretrain(full, full_opt, samples, pc, 0, 4);

  PretrainModel first(cfg, pc.seed);
  OptimizerState first_opt = make_optimizer(first.store);
  run_pretrain(first, first_opt, samples, pc, 0, 2);
  std::stringstream params;
  std::stringstream optim;
  write_checkpoint(params, snapshot(first.store, first_opt.step, 0));
  write_checkpoint(optim, snapshot_optimizer(first.store, first_opt));

  PretrainModel resumed(cfg, 12345);
  load_parameters(resumed.store, read_checkpoint(params));
  OptimizerState resumed_opt = make_optimizer(resumed.store);
  load_optimizer(resumed.store, resumed_opt, read_checkpoint(optim));
  const auto tail = run_pretrain(resumed, resumed_opt, samples, pc, 2, 4);

  REQUIRE(tail.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(tail[i].epoch == full_log[i + 2].epoch);
    CHECK(tail[i].l_pre == full_log[i + 2].l_pre);
    CHECK(tail[i].lr == full_log[i + 2].lr);
  }
  CHECK(resumed_opt.step == full_opt.step);
  CHECK(same_parameters(resumed.store, full.store));
}

TEST_CASE("pretraining is deterministic under a seed") {
  const ModelConfig cfg = small_model();
  const auto samples = random_samples(6, 14);
  PretrainConfig pc;
  pc.epochs = 2;
  pc.batch_size = 3;
  pc.seed = 4;
  PretrainModel a(cfg, pc.seed);
  PretrainModel b(cfg, pc.seed);
  OptimizerState oa = make_optimizer(a.store);
  OptimizerState ob = make_optimizer(b.store);
  const auto la = run_pretrain(a, oa, samples, pc, 0, 2);
  const auto lb = run_pretrain(b, ob, samples, pc, 0, 2);
  for (std::size_t i = 0; i < 2; ++i) CHECK(la[i].l_pre == lb[i].l_pre);
  CHECK(same_parameters(a.store, b.store));
}

TEST_CASE("MRM overfits a single repeated scene") {
  ModelConfig cfg = small_model();
  cfg.backbone.d_model = 32;
  cfg.backbone.dropout = 0.0;
  Rng rng(30);
  Scene scene = random_scene(rng, 4, 3, 20, 20.0);
  const FieldParams field;
  const Sample one = prepare_sample(scene, cfg.dims, &field);
  REQUIRE(one.map.valid_count() == 3);
  const std::vector<Sample> samples(8, one);
  PretrainConfig pc;
  pc.w_vif = 0.0;
  pc.w_mrm = 1.0;
  pc.mask_ratio = 0.1;
  pc.epochs = 400;
  pc.batch_size = 8;
  pc.base_lr = 3e-3;
  PretrainModel model(cfg, 3);
  OptimizerState opt = make_optimizer(model.store);
  run_pretrain(model, opt, samples, pc, 0, pc.epochs);
  const double err = mrm_endpoint_error(model, samples, pc);
  MESSAGE("overfit endpoint error " << err);
  CHECK(err < 0.1);
}

TEST_CASE("pretrain config validation") {
  PretrainConfig pc;
  CHECK_NOTHROW(pc.validate());
  pc.w_vif = 0.0;
  pc.w_mrm = 0.0;
  CHECK_THROWS_AS(pc.validate(), Error);
  pc = {};
  pc.mask_ratio = 1.0;
  CHECK_THROWS_AS(pc.validate(), Error);
  pc = {};
  pc.batch_size = 0;
  CHECK_THROWS_AS(pc.validate(), Error);
  pc = {};
  pc.w_mrm = -1.0;
  CHECK_THROWS_AS(pc.validate(), Error);
}
