/* C interface to the pgsu library. All functions return a pgsu_status;
 * on failure pgsu_last_error() describes the problem (per thread). */
#ifndef PGSU_PGSU_H
#define PGSU_PGSU_H

#include <stddef.h>
#include <stdint.h>

#if defined(PGSU_BUILDING)
#define PGSU_API __attribute__((visibility("default")))
#else
#define PGSU_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum pgsu_status {
  PGSU_OK = 0,
  PGSU_ERR_INTERNAL = 1,
  PGSU_ERR_USAGE = 2,
  PGSU_ERR_DATA = 3,
  PGSU_ERR_NUMERIC = 4
} pgsu_status;

typedef struct pgsu_config pgsu_config;
typedef struct pgsu_checkpoint pgsu_checkpoint;

/* Receives output lines (histograms, tables, progress). */
typedef void (*pgsu_log_fn)(const char* line, void* user);

PGSU_API const char* pgsu_version(void);
PGSU_API const char* pgsu_last_error(void);
/* Process-wide; pass NULL to silence output. */
PGSU_API void pgsu_set_log(pgsu_log_fn fn, void* user);

/* Configuration: flat dotted keys with defaults for every module. */
PGSU_API pgsu_status pgsu_config_create(pgsu_config** out);
PGSU_API void pgsu_config_destroy(pgsu_config* cfg);
/* Replaces cfg with defaults overridden by the file's entries. */
PGSU_API pgsu_status pgsu_config_load(pgsu_config* cfg, const char* path);
PGSU_API pgsu_status pgsu_config_set(pgsu_config* cfg, const char* key, const char* value);
/* Copies the NUL-terminated value into buf when it fits; *needed receives
 * the required size including the terminator. */
PGSU_API pgsu_status pgsu_config_get(const pgsu_config* cfg, const char* key, char* buf,
                                     size_t cap, size_t* needed);
PGSU_API pgsu_status pgsu_config_dump(const pgsu_config* cfg, char* buf, size_t cap,
                                      size_t* needed);
PGSU_API pgsu_status pgsu_config_hash(const pgsu_config* cfg, uint64_t* out);

/* Pipeline commands. Output directories are created as needed. */
PGSU_API pgsu_status pgsu_gen_data(const pgsu_config* cfg, const char* out_path);
PGSU_API pgsu_status pgsu_pretrain(const pgsu_config* cfg, const char* data, const char* out_dir,
                                   int resume);
/* Cross product of the weight lists, one subdirectory per setting. */
PGSU_API pgsu_status pgsu_pretrain_grid(const pgsu_config* cfg, const char* data,
                                        const char* out_dir, const double* w_vif, size_t n_vif,
                                        const double* w_mrm, size_t n_mrm);
/* checkpoint may be NULL for training from scratch. */
PGSU_API pgsu_status pgsu_finetune(const pgsu_config* cfg, const char* data,
                                   const char* checkpoint, const char* out_dir);
PGSU_API pgsu_status pgsu_ablation(const pgsu_config* cfg, const char* data, const char* out_dir);
PGSU_API pgsu_status pgsu_eval(const pgsu_config* cfg, const char* data, const char* checkpoint,
                               const char* out_dir);
PGSU_API pgsu_status pgsu_vif_render(const pgsu_config* cfg, const char* scene_file, size_t index,
                                     double resolution, const char* out_prefix);
/* cfg may be NULL; with a config the closed-form count is compared. */
PGSU_API pgsu_status pgsu_inspect(const char* checkpoint, const pgsu_config* cfg);

/* Closed-form parameter count; kind is "pretrain", "trajectory" or
 * "intention". */
PGSU_API pgsu_status pgsu_parameter_count(const pgsu_config* cfg, const char* kind,
                                          uint64_t* out);

/* Read-only checkpoint access. */
PGSU_API pgsu_status pgsu_checkpoint_open(const char* path, pgsu_checkpoint** out);
PGSU_API void pgsu_checkpoint_close(pgsu_checkpoint* ckpt);
PGSU_API size_t pgsu_checkpoint_entry_count(const pgsu_checkpoint* ckpt);
PGSU_API const char* pgsu_checkpoint_entry_name(const pgsu_checkpoint* ckpt, size_t i);
PGSU_API size_t pgsu_checkpoint_entry_rank(const pgsu_checkpoint* ckpt, size_t i);
PGSU_API size_t pgsu_checkpoint_entry_dim(const pgsu_checkpoint* ckpt, size_t i, size_t axis);
PGSU_API uint64_t pgsu_checkpoint_parameter_count(const pgsu_checkpoint* ckpt);
PGSU_API uint64_t pgsu_checkpoint_step(const pgsu_checkpoint* ckpt);
PGSU_API uint64_t pgsu_checkpoint_config_hash(const pgsu_checkpoint* ckpt);

#ifdef __cplusplus
}
#endif

#endif
