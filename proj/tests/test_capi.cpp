#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "pgsu/pgsu.h"

namespace fs = std::filesystem;

namespace {

const fs::path kWork = "capi_work";

struct RunResult {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RunResult cli(const std::string& args) {
  fs::create_directories(kWork);
  const fs::path out = kWork / "stdout.txt";
  const fs::path err = kWork / "stderr.txt";
  const std::string cmd = std::string(PGSU_CLI_PATH) + " " + args + " >" + out.string() +
                          " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

std::size_t count_lines(const std::string& text) {
  std::size_t n = 0;
  for (char c : text) n += c == '\n';
  return n;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) out.push_back(line);
  return out;
}

// Small model so the pipeline commands finish in seconds.
fs::path tiny_config() {
  const fs::path p = kWork / "tiny.cfg";
  fs::create_directories(kWork);
  std::ofstream(p) << "# small model for command tests\n"
                      "scene.max_agents = 8\n"
                      "scene.max_lanes = 8\n"
                      "backbone.D = 8\n"
                      "backbone.N = 1\n"
                      "backbone.M = 1\n"
                      "backbone.subgraph_layers = 1\n"
                      "pretrain.batch_size = 8\n"
                      "finetune.batch_size = 8\n"
                      "gen.agents_max = 4\n";
  return p;
}

fs::path tiny_dataset(const std::string& family, std::size_t count) {
  const fs::path p = kWork / (family + std::to_string(count) + ".jsonl");
  if (!fs::exists(p)) {
    const RunResult r = cli("gen-data --config " + tiny_config().string() + " --family " + family +
                            " --count " + std::to_string(count) + " --seed 1 --out " + p.string());
    REQUIRE(r.code == 0);
  }
  return p;
}

struct Config {
  pgsu_config* cfg = nullptr;
  Config() { REQUIRE(pgsu_config_create(&cfg) == PGSU_OK); }
  ~Config() { pgsu_config_destroy(cfg); }
};

}  // namespace

TEST_CASE("C API configuration handles") {
  pgsu_set_log(nullptr, nullptr);
  Config c;
  CHECK(pgsu_config_set(c.cfg, "backbone.D", "32") == PGSU_OK);
  char buf[8];
  size_t needed = 0;
  CHECK(pgsu_config_get(c.cfg, "backbone.D", buf, sizeof buf, &needed) == PGSU_OK);
  CHECK(std::string(buf) == "32");
  CHECK(needed == 3);
  CHECK(pgsu_config_get(c.cfg, "finetune.task", buf, 4, &needed) != PGSU_OK);
  CHECK(needed == std::string("trajectory").size() + 1);

  CHECK(pgsu_config_set(c.cfg, "backbone.Q", "1") == PGSU_ERR_USAGE);
  CHECK(std::string(pgsu_last_error()).find("backbone.Q") != std::string::npos);
  CHECK(pgsu_config_set(c.cfg, "backbone.D", "x") == PGSU_ERR_USAGE);

  uint64_t h1 = 0;
  uint64_t h2 = 0;
  CHECK(pgsu_config_hash(c.cfg, &h1) == PGSU_OK);
  CHECK(pgsu_config_set(c.cfg, "run.seed", "3") == PGSU_OK);
  CHECK(pgsu_config_hash(c.cfg, &h2) == PGSU_OK);
  CHECK(h1 != h2);

  CHECK(pgsu_config_dump(c.cfg, nullptr, 0, &needed) == PGSU_OK);
  CHECK(needed > 1);
  std::string dump(needed, '\0');
  CHECK(pgsu_config_dump(c.cfg, dump.data(), dump.size(), &needed) == PGSU_OK);
  CHECK(dump.find("run.seed = 3\n") != std::string::npos);

  CHECK(pgsu_config_load(c.cfg, "capi_work/does-not-exist.cfg") == PGSU_ERR_DATA);
  CHECK(pgsu_gen_data(nullptr, "x") == PGSU_ERR_USAGE);
  CHECK(std::string(pgsu_version()).size() > 0);
}

TEST_CASE("C API parameter count") {
  Config c;
  uint64_t n = 0;
  CHECK(pgsu_parameter_count(c.cfg, "trajectory", &n) == PGSU_OK);
  CHECK(n > 0);
  CHECK(pgsu_parameter_count(c.cfg, "bogus", &n) == PGSU_ERR_USAGE);
}

TEST_CASE("cli usage errors exit with 2") {
  CHECK(cli("").code == 2);
  CHECK(cli("frobnicate").code == 2);
  CHECK(cli("gen-data --count 3").code == 2);
  CHECK(cli("gen-data --out capi_work/x.jsonl --set nope=1").code == 2);
  CHECK(cli("gen-data --out capi_work/x.jsonl --set backbone.D").code == 2);
  CHECK(cli("gen-data --out capi_work/x.jsonl --family rural").code == 2);
}

TEST_CASE("cli gen-data") {
  RunResult r = cli("gen-data --count 0 --out capi_work/empty.jsonl");
  CHECK(r.code == 0);
  CHECK(slurp(kWork / "empty.jsonl") == "# pgsu dataset v1\n");

  r = cli("gen-data --family urban --count 25 --seed 4 --out capi_work/a.jsonl");
  REQUIRE(r.code == 0);
  const RunResult again = cli("gen-data --family urban --count 25 --seed 4 --out capi_work/b.jsonl");
  REQUIRE(again.code == 0);
  CHECK(slurp(kWork / "a.jsonl") == slurp(kWork / "b.jsonl"));
  CHECK(cli("gen-data --family urban --count 25 --seed 5 --out capi_work/c.jsonl").code == 0);
  CHECK(slurp(kWork / "a.jsonl") != slurp(kWork / "c.jsonl"));

  // Histogram lines "<class> <count>" sum to the scenes written.
  std::size_t total = 0;
  std::size_t skipped = 0;
  for (const std::string& line : lines_of(r.out)) {
    std::istringstream ss(line);
    std::string name;
    std::size_t n = 0;
    if (line.starts_with("family")) {
      const auto pos = line.find("written, ");
      skipped = std::stoul(line.substr(pos + 9));
    }
    if ((ss >> name >> n) && (name == "left" || name == "straight" || name == "right")) total += n;
  }
  CHECK(total + skipped == 25);
  CHECK(count_lines(slurp(kWork / "a.jsonl")) == total + 1);

  CHECK(cli("gen-data --count 2 --out /proc/forbidden/x.jsonl").code == 3);
}

TEST_CASE("cli pretrain writes artifacts and is reproducible") {
  const fs::path data = tiny_dataset("highway", 20);
  const std::string base = "pretrain --config " + tiny_config().string() + " --data " +
                           data.string() + " --epochs 2 --out ";
  REQUIRE(cli(base + "capi_work/pre1").code == 0);
  REQUIRE(cli(base + "capi_work/pre2").code == 0);
  for (const char* f : {"config.txt", "pretrain.ckpt", "pretrain.optim", "pretrain_log.csv",
                        "pretrain_summary.csv"}) {
    CHECK(fs::exists(kWork / "pre1" / f));
    CHECK(slurp(kWork / "pre1" / f) == slurp(kWork / "pre2" / f));
  }
  CHECK(count_lines(slurp(kWork / "pre1" / "pretrain_log.csv")) == 3);

  // Re-running from the saved config alone reproduces the run.
  REQUIRE(cli("pretrain --config capi_work/pre1/config.txt --data " + data.string() +
              " --out capi_work/pre3")
              .code == 0);
  CHECK(slurp(kWork / "pre1" / "pretrain.ckpt") == slurp(kWork / "pre3" / "pretrain.ckpt"));

  // Inspect validates the checkpoint against the closed form.
  const RunResult in = cli("inspect --checkpoint capi_work/pre1/pretrain.ckpt");
  CHECK(in.code == 0);
  CHECK(in.out.find("(match)") != std::string::npos);

  pgsu_checkpoint* ck = nullptr;
  REQUIRE(pgsu_checkpoint_open("capi_work/pre1/pretrain.ckpt", &ck) == PGSU_OK);
  CHECK(pgsu_checkpoint_entry_count(ck) > 0);
  uint64_t sum = 0;
  for (size_t i = 0; i < pgsu_checkpoint_entry_count(ck); ++i) {
    uint64_t n = 1;
    for (size_t a = 0; a < pgsu_checkpoint_entry_rank(ck, i); ++a)
      n *= pgsu_checkpoint_entry_dim(ck, i, a);
    sum += n;
  }
  CHECK(sum == pgsu_checkpoint_parameter_count(ck));
  CHECK(pgsu_checkpoint_step(ck) == 6);  // 18 training scenes, batch 8, 2 epochs
  CHECK(std::string(pgsu_checkpoint_entry_name(ck, 0)).size() > 0);
  CHECK(pgsu_checkpoint_entry_name(ck, 100000) == nullptr);
  pgsu_checkpoint_close(ck);
}

TEST_CASE("cli pretrain weight grid") {
  const fs::path data = tiny_dataset("highway", 20);
  const RunResult r = cli("pretrain --config " + tiny_config().string() + " --data " +
                          data.string() + " --epochs 1 --w-vif 10,1 --w-mrm 1 --out capi_work/grid");
  REQUIRE(r.code == 0);
  const auto rows = lines_of(slurp(kWork / "grid" / "grid_summary.csv"));
  REQUIRE(rows.size() == 3);
  CHECK(rows[1].starts_with("10,1,"));
  CHECK(rows[2].starts_with("1,1,"));
}

TEST_CASE("cli finetune, eval and ablation") {
  const fs::path data = tiny_dataset("highway", 30);
  const std::string cfg = " --config " + tiny_config().string() + " --data " + data.string();

  RunResult r = cli("finetune --task trajectory --epochs 1" + cfg + " --out capi_work/ft");
  REQUIRE(r.code == 0);
  CHECK(r.out.find("minADE") != std::string::npos);
  CHECK(fs::exists(kWork / "ft" / "finetune.ckpt"));
  CHECK(fs::exists(kWork / "ft" / "metrics.csv"));
  CHECK(fs::exists(kWork / "ft" / "config.txt"));

  const std::string ev = "eval --data " + data.string() + " --checkpoint capi_work/ft/finetune.ckpt";
  REQUIRE(cli(ev + " --out capi_work/ev1").code == 0);
  REQUIRE(cli(ev + " --out capi_work/ev2").code == 0);
  CHECK(slurp(kWork / "ev1" / "eval.csv") == slurp(kWork / "ev2" / "eval.csv"));
  CHECK(cli("eval --data " + data.string() + " --checkpoint capi_work/none.ckpt --out capi_work/ev3")
            .code == 3);

  r = cli("finetune --task intention --epochs 1" + cfg + " --out capi_work/fti");
  REQUIRE(r.code == 0);
  CHECK(r.out.find("Straight   Left       Right      Overall") != std::string::npos);
  // The wrong task for a checkpoint is a data error.
  CHECK(cli("eval --task trajectory --data " + data.string() +
            " --checkpoint capi_work/fti/finetune.ckpt --config capi_work/fti/config.txt"
            " --out capi_work/ev4")
            .code == 3);

  r = cli("finetune --task intention --ablation --epochs 1 --set pretrain.epochs=1" + cfg +
          " --out capi_work/abl");
  REQUIRE(r.code == 0);
  const auto rows = lines_of(slurp(kWork / "abl" / "ablation.csv"));
  REQUIRE(rows.size() == 5);
  CHECK(rows[0] == "pretrain_mode,accuracy_overall,accuracy_left,accuracy_straight,accuracy_right");
  CHECK(rows[1].starts_with("none,"));
  CHECK(rows[4].starts_with("both,"));

  // Loading a backbone of another width is rejected.
  CHECK(cli("finetune --epochs 1" + cfg +
            " --set backbone.D=16 --checkpoint capi_work/abl/both/pretrain/pretrain.ckpt"
            " --out capi_work/ft_bad")
            .code == 3);
}

TEST_CASE("cli reports numeric failure") {
  const fs::path data = tiny_dataset("highway", 20);
  const RunResult r = cli("pretrain --config " + tiny_config().string() + " --data " +
                          data.string() + " --epochs 3 --set pretrain.base_lr=1e300 --out capi_work/nan");
  CHECK(r.code == 4);
  CHECK(r.err.find("non-finite") != std::string::npos);
}

TEST_CASE("cli vif-render") {
  const fs::path lone = kWork / "lone.jsonl";
  std::string positions;
  std::string velocities;
  for (int k = 0; k <= 20; ++k) {
    const char* sep = k == 0 ? "" : ",";
    positions += sep + std::string("[") + std::to_string(k) + ",0]";
    velocities += sep + std::string("[10,0]");
  }
  std::ofstream(lone) << "{\"agents\":[{\"positions\":[" << positions << "],\"velocities\":["
                      << velocities
                      << "],\"type\":\"vehicle\",\"bbox\":[4.8,1.8]}],\"lanes\":[],\"target\":0,"
                         "\"hz\":10}\n";
  RunResult r = cli("vif-render --scene-file " + lone.string() + " --res 0.5 --out capi_work/lone");
  REQUIRE(r.code == 0);
  // 40 m window around the target at 0.5 m.
  CHECK(r.out.find("grid 80 x 80") != std::string::npos);
  const auto out_lines = lines_of(r.out);
  CHECK(out_lines.back() == "slot agent raw normalized");
  std::istringstream gs(slurp(kWork / "lone.txt"));
  std::size_t width = 0;
  std::size_t height = 0;
  double res = 0.0;
  double ox = 0.0;
  double oy = 0.0;
  REQUIRE(static_cast<bool>(gs >> width >> height >> res >> ox >> oy));
  CHECK(width == 80);
  CHECK(height == 80);
  CHECK(res == 0.5);
  std::size_t cells = 0;
  double v = 0.0;
  while (gs >> v) {
    CHECK(v == 0.0);
    ++cells;
  }
  CHECK(cells == 6400);
  CHECK(fs::exists(kWork / "lone.pgm"));

  const fs::path data = tiny_dataset("urban", 5);
  r = cli("vif-render --scene-file " + data.string() + " --index 2 --out capi_work/urban");
  REQUIRE(r.code == 0);
  bool after_header = false;
  std::size_t printed = 0;
  for (const std::string& line : lines_of(r.out)) {
    if (after_header) {
      std::istringstream ss(line);
      std::size_t slot = 0;
      std::size_t agent = 0;
      double raw = 0.0;
      double norm = -1.0;
      REQUIRE(static_cast<bool>(ss >> slot >> agent >> raw >> norm));
      CHECK(norm >= 0.0);
      CHECK(norm <= 1.0);
      ++printed;
    }
    after_header = after_header || line == "slot agent raw normalized";
  }
  CHECK(printed > 0);
  CHECK(cli("vif-render --scene-file " + data.string() + " --index 99 --out capi_work/u2").code == 2);
}

TEST_CASE("cli inspect rejects corrupt checkpoints") {
  const fs::path data = tiny_dataset("highway", 20);
  if (!fs::exists(kWork / "pre1" / "pretrain.ckpt")) {
    REQUIRE(cli("pretrain --config " + tiny_config().string() + " --data " + data.string() +
                " --epochs 1 --out capi_work/pre1")
                .code == 0);
  }
  const std::string good = slurp(kWork / "pre1" / "pretrain.ckpt");
  std::ofstream(kWork / "trunc.ckpt", std::ios::binary) << good.substr(0, good.size() / 2);
  RunResult r = cli("inspect --checkpoint capi_work/trunc.ckpt");
  CHECK(r.code == 3);
  CHECK(r.err.find("offset") != std::string::npos);

  std::string empty_name = good;
  for (int i = 0; i < 8; ++i) empty_name[16 + i] = 0;
  std::ofstream(kWork / "noname.ckpt", std::ios::binary) << empty_name;
  r = cli("inspect --checkpoint capi_work/noname.ckpt");
  CHECK(r.code == 3);

  std::ofstream(kWork / "zero.ckpt", std::ios::binary) << "";
  CHECK(cli("inspect --checkpoint capi_work/zero.ckpt").code == 3);
  pgsu_checkpoint* ck = nullptr;
  CHECK(pgsu_checkpoint_open("capi_work/zero.ckpt", &ck) == PGSU_ERR_DATA);
  CHECK(ck == nullptr);
}
