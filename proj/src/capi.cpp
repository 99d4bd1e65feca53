#include "pgsu/pgsu.h"

#include <cstring>
#include <exception>
#include <mutex>
#include <new>
#include <string>

#include "pgsu/checkpoint.hpp"
#include "pgsu/config.hpp"
#include "pgsu/error.hpp"
#include "pgsu/pipeline.hpp"

struct pgsu_config {
  pgsu::RunConfig config;
};

struct pgsu_checkpoint {
  pgsu::Checkpoint ckpt;
};

namespace {

thread_local std::string g_last_error;

std::mutex g_log_mutex;
pgsu_log_fn g_log_fn = nullptr;
void* g_log_user = nullptr;

void log_line(std::string_view line) {
  std::lock_guard lock(g_log_mutex);
  if (g_log_fn != nullptr) g_log_fn(std::string(line).c_str(), g_log_user);
}

pgsu::Logger logger() { return log_line; }

pgsu_status status_of(pgsu::ErrorKind kind) {
  switch (kind) {
    case pgsu::ErrorKind::usage: return PGSU_ERR_USAGE;
    case pgsu::ErrorKind::data: return PGSU_ERR_DATA;
    case pgsu::ErrorKind::numeric: return PGSU_ERR_NUMERIC;
    case pgsu::ErrorKind::internal: return PGSU_ERR_INTERNAL;
  }
  return PGSU_ERR_INTERNAL;
}

template <typename Fn>
pgsu_status guarded(Fn fn) {
  try {
    fn();
    g_last_error.clear();
    return PGSU_OK;
  } catch (const pgsu::Error& e) {
    g_last_error = e.what();
    return status_of(e.kind());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return PGSU_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return PGSU_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return PGSU_ERR_INTERNAL;
  }
}

void require(const void* p, const char* what) {
  if (p == nullptr) pgsu::fail(pgsu::ErrorKind::usage, std::string(what) + " must not be null");
}

pgsu_status copy_out(const std::string& value, char* buf, size_t cap, size_t* needed) {
  if (needed != nullptr) *needed = value.size() + 1;
  if (buf == nullptr || cap == 0) return PGSU_OK;
  if (cap < value.size() + 1) {
    g_last_error = "buffer too small";
    return PGSU_ERR_USAGE;
  }
  std::memcpy(buf, value.c_str(), value.size() + 1);
  return PGSU_OK;
}

}  // namespace

extern "C" {

const char* pgsu_version(void) { return "1.0.0"; }

const char* pgsu_last_error(void) { return g_last_error.c_str(); }

void pgsu_set_log(pgsu_log_fn fn, void* user) {
  std::lock_guard lock(g_log_mutex);
  g_log_fn = fn;
  g_log_user = user;
}

pgsu_status pgsu_config_create(pgsu_config** out) {
  return guarded([&] {
    require(out, "out");
    *out = new pgsu_config{};
  });
}

void pgsu_config_destroy(pgsu_config* cfg) { delete cfg; }

pgsu_status pgsu_config_load(pgsu_config* cfg, const char* path) {
  return guarded([&] {
    require(cfg, "config");
    require(path, "path");
    cfg->config = pgsu::RunConfig::load(path);
  });
}

pgsu_status pgsu_config_set(pgsu_config* cfg, const char* key, const char* value) {
  return guarded([&] {
    require(cfg, "config");
    require(key, "key");
    require(value, "value");
    cfg->config.set(key, value);
  });
}

pgsu_status pgsu_config_get(const pgsu_config* cfg, const char* key, char* buf, size_t cap,
                            size_t* needed) {
  std::string value;
  const pgsu_status s = guarded([&] {
    require(cfg, "config");
    require(key, "key");
    value = cfg->config.get(key);
  });
  return s == PGSU_OK ? copy_out(value, buf, cap, needed) : s;
}

pgsu_status pgsu_config_dump(const pgsu_config* cfg, char* buf, size_t cap, size_t* needed) {
  std::string value;
  const pgsu_status s = guarded([&] {
    require(cfg, "config");
    value = cfg->config.serialize();
  });
  return s == PGSU_OK ? copy_out(value, buf, cap, needed) : s;
}

pgsu_status pgsu_config_hash(const pgsu_config* cfg, uint64_t* out) {
  return guarded([&] {
    require(cfg, "config");
    require(out, "out");
    *out = cfg->config.hash();
  });
}

pgsu_status pgsu_gen_data(const pgsu_config* cfg, const char* out_path) {
  return guarded([&] {
    require(cfg, "config");
    require(out_path, "output path");
    pgsu::run_gen_data(cfg->config, out_path, logger());
  });
}

pgsu_status pgsu_pretrain(const pgsu_config* cfg, const char* data, const char* out_dir,
                          int resume) {
  return guarded([&] {
    require(cfg, "config");
    require(data, "data");
    require(out_dir, "output directory");
    pgsu::run_pretrain_command(cfg->config, data, out_dir, resume != 0, logger());
  });
}

pgsu_status pgsu_pretrain_grid(const pgsu_config* cfg, const char* data, const char* out_dir,
                               const double* w_vif, size_t n_vif, const double* w_mrm,
                               size_t n_mrm) {
  return guarded([&] {
    require(cfg, "config");
    require(data, "data");
    require(out_dir, "output directory");
    require(w_vif, "w_vif");
    require(w_mrm, "w_mrm");
    pgsu::run_pretrain_grid(cfg->config, data, out_dir, {w_vif, w_vif + n_vif},
                            {w_mrm, w_mrm + n_mrm}, logger());
  });
}

pgsu_status pgsu_finetune(const pgsu_config* cfg, const char* data, const char* checkpoint,
                          const char* out_dir) {
  return guarded([&] {
    require(cfg, "config");
    require(data, "data");
    require(out_dir, "output directory");
    std::optional<std::filesystem::path> ckpt;
    if (checkpoint != nullptr) ckpt = checkpoint;
    pgsu::run_finetune_command(cfg->config, data, ckpt, out_dir, logger());
  });
}

pgsu_status pgsu_ablation(const pgsu_config* cfg, const char* data, const char* out_dir) {
  return guarded([&] {
    require(cfg, "config");
    require(data, "data");
    require(out_dir, "output directory");
    pgsu::run_ablation(cfg->config, data, out_dir, logger());
  });
}

pgsu_status pgsu_eval(const pgsu_config* cfg, const char* data, const char* checkpoint,
                      const char* out_dir) {
  return guarded([&] {
    require(cfg, "config");
    require(data, "data");
    require(checkpoint, "checkpoint");
    require(out_dir, "output directory");
    pgsu::run_eval(cfg->config, data, checkpoint, out_dir, logger());
  });
}

pgsu_status pgsu_vif_render(const pgsu_config* cfg, const char* scene_file, size_t index,
                            double resolution, const char* out_prefix) {
  return guarded([&] {
    require(cfg, "config");
    require(scene_file, "scene file");
    require(out_prefix, "output prefix");
    pgsu::run_vif_render(cfg->config, scene_file, index, resolution, out_prefix, logger());
  });
}

pgsu_status pgsu_inspect(const char* checkpoint, const pgsu_config* cfg) {
  return guarded([&] {
    require(checkpoint, "checkpoint");
    pgsu::run_inspect(checkpoint, cfg != nullptr ? &cfg->config : nullptr, logger());
  });
}

pgsu_status pgsu_parameter_count(const pgsu_config* cfg, const char* kind, uint64_t* out) {
  return guarded([&] {
    require(cfg, "config");
    require(kind, "kind");
    require(out, "out");
    const std::string k = kind;
    pgsu::ModelKind mk;
    if (k == "pretrain") {
      mk = pgsu::ModelKind::pretrain;
    } else if (k == "trajectory") {
      mk = pgsu::ModelKind::trajectory;
    } else if (k == "intention") {
      mk = pgsu::ModelKind::intention;
    } else {
      pgsu::fail(pgsu::ErrorKind::usage, "unknown model kind '" + k + "'");
    }
    *out = pgsu::closed_form_parameter_count(cfg->config.model_config(), mk);
  });
}

pgsu_status pgsu_checkpoint_open(const char* path, pgsu_checkpoint** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new pgsu_checkpoint{pgsu::read_checkpoint(std::filesystem::path(path))};
  });
}

void pgsu_checkpoint_close(pgsu_checkpoint* ckpt) { delete ckpt; }

size_t pgsu_checkpoint_entry_count(const pgsu_checkpoint* ckpt) {
  return ckpt == nullptr ? 0 : ckpt->ckpt.entries.size();
}

const char* pgsu_checkpoint_entry_name(const pgsu_checkpoint* ckpt, size_t i) {
  if (ckpt == nullptr || i >= ckpt->ckpt.entries.size()) return nullptr;
  return ckpt->ckpt.entries[i].name.c_str();
}

size_t pgsu_checkpoint_entry_rank(const pgsu_checkpoint* ckpt, size_t i) {
  if (ckpt == nullptr || i >= ckpt->ckpt.entries.size()) return 0;
  return ckpt->ckpt.entries[i].shape.size();
}

size_t pgsu_checkpoint_entry_dim(const pgsu_checkpoint* ckpt, size_t i, size_t axis) {
  if (ckpt == nullptr || i >= ckpt->ckpt.entries.size()) return 0;
  const auto& shape = ckpt->ckpt.entries[i].shape;
  return axis < shape.size() ? shape[axis] : 0;
}

uint64_t pgsu_checkpoint_parameter_count(const pgsu_checkpoint* ckpt) {
  return ckpt == nullptr ? 0 : ckpt->ckpt.parameter_count();
}

uint64_t pgsu_checkpoint_step(const pgsu_checkpoint* ckpt) {
  return ckpt == nullptr ? 0 : ckpt->ckpt.step;
}

uint64_t pgsu_checkpoint_config_hash(const pgsu_checkpoint* ckpt) {
  return ckpt == nullptr ? 0 : ckpt->ckpt.config_hash;
}

}  // extern "C"
