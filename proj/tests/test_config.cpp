#include <sstream>
#include <string>

#include "doctest.h"
#include "pgsu/config.hpp"
#include "pgsu/error.hpp"

using namespace pgsu;

namespace {

ErrorKind parse_error(const std::string& text, std::string* message = nullptr) {
  std::istringstream in(text);
  try {
    RunConfig::parse(in);
  } catch (const Error& e) {
    if (message != nullptr) *message = e.what();
    return e.kind();
  }
  return ErrorKind::internal;
}

}  // namespace

TEST_CASE("config parses key = value lines with comments") {
  std::istringstream in(
      "# a comment\n"
      "\n"
      "backbone.D = 32   # trailing comment\n"
      "  field.k1=2.5\n"
      "run.seed = 7\n"
      "finetune.task = intention\n"
      "gen.speed_min = auto\n");
  const RunConfig c = RunConfig::parse(in);
  CHECK(c.integer("backbone.D") == 32);
  CHECK(c.real("field.k1") == 2.5);
  CHECK(c.seed() == 7);
  CHECK(c.get("finetune.task") == "intention");
  CHECK(c.model_config().backbone.d_model == 32);
  CHECK(c.field_params().k1 == 2.5);
  CHECK(c.finetune_config().task == Task::intention);
  CHECK(c.finetune_config().effective_batch() == 256);
  CHECK(c.pretrain_config().seed == 7);
}

TEST_CASE("config defaults") {
  const RunConfig c;
  const ModelConfig m = c.model_config();
  CHECK(m.dims.max_agents == 20);
  CHECK(m.dims.max_lanes == 32);
  CHECK(m.dims.lane_segments == 10);
  CHECK(m.dims.history_steps == 20);
  CHECK(m.backbone.d_model == 64);
  CHECK(m.backbone.n_interleave == 2);
  CHECK(m.backbone.m_alltoken == 3);
  CHECK(m.modes == 6);
  CHECK(m.future_steps == 30);
  const PretrainConfig p = c.pretrain_config();
  CHECK(p.w_vif == 10.0);
  CHECK(p.w_mrm == 1.0);
  CHECK(p.mask_ratio == 0.5);
  CHECK(p.batch_size == 64);
  CHECK(p.epochs == 60);
  CHECK(c.finetune_config().effective_batch() == 64);
  const GenConfig g = c.gen_config();
  CHECK(g.family == ScenarioFamily::highway);
  CHECK(g.noise_std == 0.1);
  RunConfig u;
  u.set("gen.family", "urban");
  CHECK(u.gen_config().speed_max == GenConfig::urban_defaults().speed_max);
}

TEST_CASE("config rejects unknown keys and bad values with line numbers") {
  std::string msg;
  CHECK(parse_error("backbone.D = 8\nbackbone.X = 1\n", &msg) == ErrorKind::usage);
  CHECK(msg.find("line 2") != std::string::npos);
  CHECK(msg.find("backbone.X") != std::string::npos);
  CHECK(parse_error("backbone.D = eight\n") == ErrorKind::usage);
  CHECK(parse_error("field.k1 = nan\n") == ErrorKind::usage);
  CHECK(parse_error("backbone.layer_norm = maybe\n") == ErrorKind::usage);
  CHECK(parse_error("finetune.task = parking\n") == ErrorKind::usage);
  CHECK(parse_error("backbone.D\n") == ErrorKind::usage);
  CHECK(parse_error("backbone.D = auto\n") == ErrorKind::usage);
  RunConfig c;
  CHECK_THROWS_AS(c.set("nope", "1"), Error);
  CHECK_THROWS_AS(c.get("nope"), Error);
  CHECK_FALSE(c.has("nope"));
  CHECK(c.has("field.G"));
}

TEST_CASE("serialized config reproduces itself") {
  RunConfig c;
  c.set("backbone.D", "48");
  c.set("pretrain.w_vif", "0.5");
  c.set("field.negate_exponent", "true");
  const std::string text = c.serialize();
  std::istringstream in(text);
  const RunConfig back = RunConfig::parse(in);
  CHECK(back.serialize() == text);
  CHECK(back.hash() == c.hash());
  RunConfig other = c;
  other.set("run.seed", "1");
  CHECK(other.hash() != c.hash());

  // One line per key, sorted.
  std::istringstream lines(text);
  std::string line;
  std::size_t n = 0;
  std::string prev;
  while (std::getline(lines, line)) {
    CHECK(line > prev);
    prev = line;
    ++n;
  }
  CHECK(n == RunConfig::keys().size());
}

TEST_CASE("derived configs validate their ranges") {
  RunConfig c;
  c.set("pretrain.mask_ratio", "1.5");
  CHECK_THROWS_AS(c.pretrain_config(), Error);
  c = {};
  c.set("pretrain.w_vif", "0");
  c.set("pretrain.w_mrm", "0");
  CHECK_THROWS_AS(c.pretrain_config(), Error);
  c = {};
  c.set("scene.max_agents", "0");
  CHECK_THROWS_AS(c.model_config(), Error);
  c = {};
  c.set("gen.lane_width", "1.5");
  CHECK_THROWS_AS(c.gen_config(), Error);
  c = {};
  c.set("finetune.val_fraction", "1");
  CHECK_THROWS_AS(c.finetune_config(), Error);
}
