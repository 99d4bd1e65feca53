#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "pgsu/error.hpp"
#include "pgsu/finetune.hpp"
#include "pgsu/pipeline.hpp"
#include "pgsu/pretrain.hpp"

using namespace pgsu;

namespace {

ModelConfig tiny_model() {
  ModelConfig m;
  m.dims.max_agents = 8;
  m.dims.max_lanes = 12;
  m.backbone.d_model = 16;
  return m;
}

std::vector<Sample> labeled_samples(ScenarioFamily family, std::size_t n, std::uint64_t seed,
                                    const ModelConfig& model, double noise = 0.1) {
  GenConfig g = family == ScenarioFamily::highway ? GenConfig::highway_defaults()
                                                  : GenConfig::urban_defaults();
  g.scene_count = n;
  g.seed = seed;
  g.agents_max = 4;
  g.noise_std = noise;
  const GenResult r = generate(g);
  return prepare_samples(r.scenes, model, nullptr);
}

}  // namespace

TEST_CASE("task and mode names") {
  CHECK(task_from_string("trajectory") == Task::trajectory);
  CHECK(task_from_string(to_string(Task::intention)) == Task::intention);
  CHECK_THROWS_AS(task_from_string("parking"), Error);
  for (PretrainMode m : {PretrainMode::none, PretrainMode::vif, PretrainMode::mrm, PretrainMode::both})
    CHECK(pretrain_mode_from_string(to_string(m)) == m);
  CHECK(pretrain_weights(PretrainMode::vif) == std::pair{10.0, 0.0});
  CHECK(pretrain_weights(PretrainMode::mrm) == std::pair{0.0, 1.0});
  CHECK(pretrain_weights(PretrainMode::both) == std::pair{10.0, 1.0});
}

TEST_CASE("finetune batch defaults per task") {
  FinetuneConfig f;
  CHECK(f.effective_batch() == 64);
  f.task = Task::intention;
  CHECK(f.effective_batch() == 256);
  f.batch_size = 10;
  CHECK(f.effective_batch() == 10);
}

TEST_CASE("closed-form parameter count against a hand sum") {
  ModelConfig m;
  m.backbone.d_model = 4;
  m.backbone.subgraph_layers = 1;
  m.backbone.n_interleave = 1;
  m.backbone.m_alltoken = 1;
  m.dims.max_agents = 5;
  m.dims.lane_segments = 2;
  m.modes = 2;
  m.future_steps = 3;
  // Agent subgraph: 9->4 (40) + fuse 8->4 (36). Map subgraph: 6->4 (28) + 36.
  // Three attention blocks of 3*16 projections + MLP 2*(16+4) = 88 each.
  const std::uint64_t backbone = 76 + 64 + 3 * 88;
  CHECK(backbone == 404);
  // Intention: 3 layers of 4->4 (20 each) + 4->3 (15).
  CHECK(closed_form_parameter_count(m, ModelKind::intention) == backbone + 75);
  // Trajectory: 3*20 + 4->12 (60); classifier 2*20 + 4->2 (10).
  CHECK(closed_form_parameter_count(m, ModelKind::trajectory) == backbone + 120 + 50);
  // Pretrain: VIF 20 + 4->5 (25); MRM 20 + 4->8 (40); mask token 4; 2->4 (12) + 4->4 (20).
  CHECK(closed_form_parameter_count(m, ModelKind::pretrain) == backbone + 45 + 60 + 4 + 32);

  CHECK(FinetuneModel(m, Task::intention, 0).store.total_count() == 479);
  CHECK(FinetuneModel(m, Task::trajectory, 0).store.total_count() == 574);
  CHECK(PretrainModel(m, 0).store.total_count() == 545);
}

TEST_CASE("closed-form parameter count matches built models") {
  for (std::size_t d : {8, 16, 64}) {
    for (std::size_t layers : {1, 3}) {
      for (bool ln : {false, true}) {
        ModelConfig m;
        m.backbone.d_model = d;
        m.backbone.subgraph_layers = layers;
        m.backbone.layer_norm = ln;
        m.backbone.n_interleave = layers;
        m.backbone.m_alltoken = 4 - layers;
        CHECK(closed_form_parameter_count(m, ModelKind::pretrain) ==
              PretrainModel(m, 1).store.total_count());
        CHECK(closed_form_parameter_count(m, ModelKind::trajectory) ==
              FinetuneModel(m, Task::trajectory, 1).store.total_count());
        CHECK(closed_form_parameter_count(m, ModelKind::intention) ==
              FinetuneModel(m, Task::intention, 1).store.total_count());
      }
    }
  }
}

TEST_CASE("backbone loads from a pretrain checkpoint and heads stay fresh") {
  const ModelConfig m = tiny_model();
  PretrainModel pre(m, 3);
  const Checkpoint ckpt = snapshot(pre.store, 0, 0);
  FinetuneModel ft(m, Task::trajectory, 9);
  const FinetuneModel fresh(m, Task::trajectory, 9);
  load_backbone(ft, ckpt);
  for (const Parameter& p : ft.store.params()) {
    const auto v = p.tensor.values();
    const bool backbone = !p.name.starts_with("head.");
    if (backbone) {
      const auto src = pre.store.find(p.name)->tensor.values();
      CHECK(std::equal(v.begin(), v.end(), src.begin(), src.end()));
    } else {
      const auto init = fresh.store.find(p.name)->tensor.values();
      CHECK(std::equal(v.begin(), v.end(), init.begin(), init.end()));
    }
  }
}

TEST_CASE("backbone mismatch lists offending names") {
  ModelConfig m = tiny_model();
  ModelConfig wider = m;
  wider.backbone.d_model = 24;
  PretrainModel pre(wider, 3);
  FinetuneModel ft(m, Task::intention, 1);
  try {
    load_backbone(ft, snapshot(pre.store, 0, 0));
    FAIL("expected mismatch");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::data);
    CHECK(std::string(e.what()).find("subgraph.agent.") != std::string::npos);
  }
  Checkpoint partial = snapshot(PretrainModel(m, 3).store, 0, 0);
  partial.entries.erase(std::remove_if(partial.entries.begin(), partial.entries.end(),
                                       [](const CheckpointEntry& e) {
                                         return e.name.starts_with("alltoken.0.");
                                       }),
                        partial.entries.end());
  try {
    load_backbone(ft, partial);
    FAIL("expected missing names");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("alltoken.0.") != std::string::npos);
  }
}

TEST_CASE("trajectory fine-tuning reduces loss and reports metrics") {
  const ModelConfig m = tiny_model();
  const auto train = labeled_samples(ScenarioFamily::urban, 24, 1, m);
  const auto val = labeled_samples(ScenarioFamily::urban, 8, 2, m);
  FinetuneModel model(m, Task::trajectory, 4);
  FinetuneConfig fc;
  fc.epochs = 15;
  fc.batch_size = 8;
  OptimizerState opt = make_optimizer(model.store);
  const auto log = run_finetune(model, opt, train, val, fc, 0, fc.epochs);
  std::vector<double> losses;
  for (const MetricRow& r : log) {
    if (r.metric == "loss") losses.push_back(r.value);
    CHECK(std::isfinite(r.value));
  }
  REQUIRE(losses.size() == 15);
  CHECK(losses.back() < losses.front());
  const auto rows = evaluate_rows(model, val, 15, "val");
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].metric == "min_ade");
  CHECK(rows[1].metric == "min_fde");
  CHECK(rows == evaluate_rows(model, val, 15, "val", 2));

  // Metrics agree with the per-prediction definitions.
  const auto preds = predict_trajectories(model, val);
  double ade = 0.0;
  for (std::size_t i = 0; i < val.size(); ++i) ade += min_ade(preds[i], val[i].future_local);
  CHECK(rows[0].value == doctest::Approx(ade / static_cast<double>(val.size())).epsilon(1e-12));
  CHECK_THROWS_AS(predict_intentions(model, val), Error);
}

TEST_CASE("intention fine-tuning learns highway lane changes") {
  ModelConfig m = tiny_model();
  m.backbone.dropout = 0.0;
  const auto train = labeled_samples(ScenarioFamily::highway, 120, 3, m, 0.0);
  FinetuneModel model(m, Task::intention, 4);
  FinetuneConfig fc;
  fc.task = Task::intention;
  fc.epochs = 60;
  fc.batch_size = 32;
  fc.base_lr = 3e-3;
  OptimizerState opt = make_optimizer(model.store);
  const auto before = evaluate_intention(model, train);
  run_finetune(model, opt, train, {}, fc, 0, fc.epochs);
  const auto after = evaluate_intention(model, train);
  MESSAGE("train accuracy " << before.overall << " -> " << after.overall);
  CHECK(after.overall > 0.9);
  const auto rows = evaluate_rows(model, train, 60, "train");
  CHECK(rows.front().metric == "accuracy_overall");
}

TEST_CASE("fine-tuning is deterministic and freeze keeps the backbone") {
  const ModelConfig m = tiny_model();
  const auto train = labeled_samples(ScenarioFamily::urban, 10, 5, m);
  FinetuneConfig fc;
  fc.epochs = 2;
  fc.batch_size = 4;
  FinetuneModel a(m, Task::trajectory, 1);
  FinetuneModel b(m, Task::trajectory, 1);
  OptimizerState oa = make_optimizer(a.store);
  OptimizerState ob = make_optimizer(b.store);
  CHECK(run_finetune(a, oa, train, train, fc, 0, 2) == run_finetune(b, ob, train, train, fc, 0, 2));

  fc.freeze_backbone = true;
  FinetuneModel frozen(m, Task::trajectory, 1);
  const FinetuneModel init(m, Task::trajectory, 1);
  OptimizerState of = make_optimizer(frozen.store);
  run_finetune(frozen, of, train, {}, fc, 0, 2);
  bool head_moved = false;
  for (const Parameter& p : frozen.store.params()) {
    const auto v = p.tensor.values();
    const auto v0 = init.store.find(p.name)->tensor.values();
    const bool same = std::equal(v.begin(), v.end(), v0.begin(), v0.end());
    if (p.name.starts_with("head.")) {
      head_moved = head_moved || !same;
    } else {
      CHECK(same);
    }
  }
  CHECK(head_moved);
}

TEST_CASE("metric CSV round trip") {
  const std::vector<MetricRow> rows{{1, "train", "loss", 0.25},
                                    {1, "val", "min_ade", 1.0 / 3.0},
                                    {2, "val", "accuracy_left", 0.9826}};
  std::stringstream ss;
  write_metric_csv(ss, rows);
  CHECK(ss.str().starts_with("epoch,split,metric,value\n"));
  CHECK(read_metric_csv(ss) == rows);
  std::istringstream bad("epoch,split,metric,value\n1,val,x\n");
  CHECK_THROWS_AS(read_metric_csv(bad), Error);
}
