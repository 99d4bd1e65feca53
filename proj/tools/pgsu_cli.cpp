// Command-line front end over the C API.
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pgsu/pgsu.h"

namespace {

namespace fs = std::filesystem;

void print_line(const char* line, void*) {
  std::printf("%s\n", line);
  std::fflush(stdout);
}

struct ConfigHandle {
  pgsu_config* cfg = nullptr;
  ConfigHandle() {
    if (pgsu_config_create(&cfg) != PGSU_OK) throw std::runtime_error(pgsu_last_error());
  }
  ~ConfigHandle() { pgsu_config_destroy(cfg); }
  ConfigHandle(const ConfigHandle&) = delete;
  ConfigHandle& operator=(const ConfigHandle&) = delete;
};

int report(pgsu_status s) {
  if (s != PGSU_OK) std::fprintf(stderr, "error: %s\n", pgsu_last_error());
  return static_cast<int>(s);
}

std::string number(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_path, "Configuration file (key = value lines)");
  app->add_option("--set", c.overrides, "Override a configuration key (key=value)");
  app->add_option("--seed", c.seed, "Run seed");
  app->add_option("--workers", c.workers, "Worker threads for data preparation and evaluation");
}

/// Loads the config file (or `fallback` when it exists) and applies the
/// command-line overrides. Returns a non-zero exit code on failure.
int build_config(ConfigHandle& h, const Common& c,
                 const std::vector<std::pair<std::string, std::string>>& flags,
                 const fs::path& fallback = {}) {
  std::string path = c.config_path;
  if (path.empty() && !fallback.empty() && fs::exists(fallback)) path = fallback.string();
  if (!path.empty()) {
    if (int rc = report(pgsu_config_load(h.cfg, path.c_str()))) return rc;
  }
  std::vector<std::pair<std::string, std::string>> sets = flags;
  if (c.seed) sets.emplace_back("run.seed", std::to_string(*c.seed));
  if (c.workers) sets.emplace_back("run.workers", std::to_string(*c.workers));
  for (const std::string& o : c.overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) {
      std::fprintf(stderr, "error: --set expects key=value, got '%s'\n", o.c_str());
      return PGSU_ERR_USAGE;
    }
    sets.emplace_back(o.substr(0, eq), o.substr(eq + 1));
  }
  for (const auto& [k, v] : sets) {
    if (int rc = report(pgsu_config_set(h.cfg, k.c_str(), v.c_str()))) return rc;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pre-trained graph-attention scene understanding: data, training, evaluation"};
  app.require_subcommand(1);
  pgsu_set_log(print_line, nullptr);

  // gen-data
  Common gen_common;
  std::string gen_family, gen_out;
  std::optional<std::size_t> gen_count, gen_balance;
  std::optional<double> gen_noise;
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic labeled dataset");
  add_common(gen, gen_common);
  gen->add_option("--family", gen_family, "highway or urban");
  gen->add_option("--count", gen_count, "Number of scenes to attempt");
  gen->add_option("--noise-std", gen_noise, "Observation noise (m)");
  gen->add_option("--balance-cap", gen_balance, "Cap on the majority class (0 = off)");
  gen->add_option("--out", gen_out, "Output dataset file")->required();

  // pretrain
  Common pre_common;
  std::string pre_data, pre_out;
  std::optional<std::size_t> pre_epochs;
  std::vector<double> pre_w_vif, pre_w_mrm;
  bool pre_resume = false;
  auto* pre = app.add_subcommand("pretrain", "Self-supervised pre-training (VIF + MRM)");
  add_common(pre, pre_common);
  pre->add_option("--data", pre_data, "Dataset file")->required();
  pre->add_option("--out", pre_out, "Output directory")->required();
  pre->add_option("--epochs", pre_epochs, "Training epochs");
  pre->add_option("--w-vif", pre_w_vif, "VIF loss weight(s); lists run a grid")->delimiter(',');
  pre->add_option("--w-mrm", pre_w_mrm, "MRM loss weight(s); lists run a grid")->delimiter(',');
  pre->add_flag("--resume", pre_resume, "Continue the run stored in --out");

  // finetune
  Common ft_common;
  std::string ft_task, ft_data, ft_ckpt, ft_mode, ft_out;
  std::optional<std::size_t> ft_epochs, ft_batch;
  bool ft_ablation = false, ft_freeze = false;
  auto* ft = app.add_subcommand("finetune", "Fine-tune a downstream head");
  add_common(ft, ft_common);
  ft->add_option("--task", ft_task, "trajectory or intention");
  ft->add_option("--data", ft_data, "Dataset file")->required();
  ft->add_option("--checkpoint", ft_ckpt, "Pre-trained checkpoint (backbone is loaded)");
  ft->add_option("--pretrain-mode", ft_mode, "none, vif, mrm or both");
  ft->add_flag("--ablation", ft_ablation, "Run all four pre-train configurations");
  ft->add_flag("--freeze-backbone", ft_freeze, "Train the head only");
  ft->add_option("--epochs", ft_epochs, "Training epochs");
  ft->add_option("--batch-size", ft_batch, "Batch size (default per task)");
  ft->add_option("--out", ft_out, "Output directory")->required();

  // eval
  Common ev_common;
  std::string ev_task, ev_data, ev_ckpt, ev_out;
  auto* ev = app.add_subcommand("eval", "Evaluate a fine-tuned checkpoint");
  add_common(ev, ev_common);
  ev->add_option("--task", ev_task, "trajectory or intention");
  ev->add_option("--data", ev_data, "Dataset file")->required();
  ev->add_option("--checkpoint", ev_ckpt, "Fine-tuned checkpoint")->required();
  ev->add_option("--out", ev_out, "Output directory")->required();

  // vif-render
  Common vr_common;
  std::string vr_file, vr_out;
  std::size_t vr_index = 0;
  double vr_res = 0.5;
  auto* vr = app.add_subcommand("vif-render", "Render the safety field around one scene");
  add_common(vr, vr_common);
  vr->add_option("--scene-file", vr_file, "Scene or dataset file")->required();
  vr->add_option("--index", vr_index, "Scene index (0-based)");
  vr->add_option("--res", vr_res, "Grid resolution (m)");
  vr->add_option("--out", vr_out, "Output prefix (.txt and .pgm are appended)")->required();

  // inspect
  Common in_common;
  std::string in_ckpt;
  auto* in = app.add_subcommand("inspect", "List checkpoint contents");
  add_common(in, in_common);
  in->add_option("--checkpoint", in_ckpt, "Checkpoint file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return PGSU_ERR_USAGE;
  }

  try {
    ConfigHandle h;
    if (gen->parsed()) {
      std::vector<std::pair<std::string, std::string>> flags;
      if (!gen_family.empty()) flags.emplace_back("gen.family", gen_family);
      if (gen_count) flags.emplace_back("gen.count", std::to_string(*gen_count));
      if (gen_noise) flags.emplace_back("gen.noise_std", number(*gen_noise));
      if (gen_balance) flags.emplace_back("gen.balance_cap", std::to_string(*gen_balance));
      if (int rc = build_config(h, gen_common, flags)) return rc;
      return report(pgsu_gen_data(h.cfg, gen_out.c_str()));
    }
    if (pre->parsed()) {
      std::vector<std::pair<std::string, std::string>> flags;
      if (pre_epochs) flags.emplace_back("pretrain.epochs", std::to_string(*pre_epochs));
      if (int rc = build_config(h, pre_common, flags)) return rc;
      if (pre_w_vif.empty() && pre_w_mrm.empty()) {
        return report(pgsu_pretrain(h.cfg, pre_data.c_str(), pre_out.c_str(), pre_resume ? 1 : 0));
      }
      auto current = [&](const char* key) {
        char buf[64];
        size_t needed = 0;
        pgsu_config_get(h.cfg, key, buf, sizeof buf, &needed);
        return std::stod(buf);
      };
      if (pre_w_vif.empty()) pre_w_vif.push_back(current("pretrain.w_vif"));
      if (pre_w_mrm.empty()) pre_w_mrm.push_back(current("pretrain.w_mrm"));
      return report(pgsu_pretrain_grid(h.cfg, pre_data.c_str(), pre_out.c_str(), pre_w_vif.data(),
                                       pre_w_vif.size(), pre_w_mrm.data(), pre_w_mrm.size()));
    }
    if (ft->parsed()) {
      std::vector<std::pair<std::string, std::string>> flags;
      if (!ft_task.empty()) flags.emplace_back("finetune.task", ft_task);
      if (!ft_mode.empty()) flags.emplace_back("finetune.pretrain_mode", ft_mode);
      if (ft_epochs) flags.emplace_back("finetune.epochs", std::to_string(*ft_epochs));
      if (ft_batch) flags.emplace_back("finetune.batch_size", std::to_string(*ft_batch));
      if (ft_freeze) flags.emplace_back("finetune.freeze_backbone", "true");
      if (int rc = build_config(h, ft_common, flags)) return rc;
      if (ft_ablation) return report(pgsu_ablation(h.cfg, ft_data.c_str(), ft_out.c_str()));
      std::string mode = ft_mode.empty() ? "none" : ft_mode;
      if (!ft_ckpt.empty() || mode == "none") {
        return report(pgsu_finetune(h.cfg, ft_data.c_str(), ft_ckpt.empty() ? nullptr : ft_ckpt.c_str(),
                                    ft_out.c_str()));
      }
      // A pre-train mode without a checkpoint pre-trains on the same data first.
      const char* w_vif = mode == "mrm" ? "0" : "10";
      const char* w_mrm = mode == "vif" ? "0" : "1";
      if (int rc = report(pgsu_config_set(h.cfg, "pretrain.w_vif", w_vif))) return rc;
      if (int rc = report(pgsu_config_set(h.cfg, "pretrain.w_mrm", w_mrm))) return rc;
      const fs::path pre_dir = fs::path(ft_out) / "pretrain";
      if (int rc = report(pgsu_pretrain(h.cfg, ft_data.c_str(), pre_dir.c_str(), 0))) return rc;
      const fs::path ckpt = pre_dir / "pretrain.ckpt";
      return report(pgsu_finetune(h.cfg, ft_data.c_str(), ckpt.c_str(), ft_out.c_str()));
    }
    if (ev->parsed()) {
      std::vector<std::pair<std::string, std::string>> flags;
      if (!ev_task.empty()) flags.emplace_back("finetune.task", ev_task);
      const fs::path fallback = fs::path(ev_ckpt).parent_path() / "config.txt";
      if (int rc = build_config(h, ev_common, flags, fallback)) return rc;
      return report(pgsu_eval(h.cfg, ev_data.c_str(), ev_ckpt.c_str(), ev_out.c_str()));
    }
    if (vr->parsed()) {
      if (int rc = build_config(h, vr_common, {})) return rc;
      return report(pgsu_vif_render(h.cfg, vr_file.c_str(), vr_index, vr_res, vr_out.c_str()));
    }
    if (in->parsed()) {
      const fs::path fallback = fs::path(in_ckpt).parent_path() / "config.txt";
      const bool with_config = !in_common.config_path.empty() || fs::exists(fallback);
      if (int rc = build_config(h, in_common, {}, fallback)) return rc;
      return report(pgsu_inspect(in_ckpt.c_str(), with_config ? h.cfg : nullptr));
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return PGSU_ERR_INTERNAL;
  }
  return PGSU_ERR_USAGE;
}
