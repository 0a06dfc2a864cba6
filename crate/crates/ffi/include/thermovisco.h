#ifndef THERMOVISCO_H
#define THERMOVISCO_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible call.
 */
typedef enum TvStatus {
  TV_STATUS_OK = 0,
  TV_STATUS_NULL_POINTER = 1,
  TV_STATUS_INVALID_ARGUMENT = 2,
  TV_STATUS_CONFIG = 3,
  TV_STATUS_STEP_FAILED = 4,
  TV_STATUS_IO = 5,
  TV_STATUS_FINISHED = 6,
  TV_STATUS_INTERNAL = 7,
} TvStatus;

/**
 * Parsed scheme configuration.
 */
typedef struct TvConfig TvConfig;

/**
 * A trajectory being stepped forward.
 */
typedef struct TvRun TvRun;

/**
 * Diagnostics of a completed or partial run.
 */
typedef struct TvSummary {
  size_t steps;
  double max_abs_drift;
  double min_det;
  double min_theta;
  double max_g;
  double v_final;
  double weighted_h1;
  double energy_budget;
  /**
   * 1 when every per-step invariant holds.
   */
  int32_t all_pass;
} TvSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *tv_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *tv_version(void);

/**
 * Reference configuration.
 */
struct TvConfig *tv_config_default(void);

/**
 * Parse a config from text.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a writable pointer.
 */
enum TvStatus tv_config_parse(const char *text, struct TvConfig **out);

/**
 * Load a config file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum TvStatus tv_config_load(const char *path, struct TvConfig **out);

/**
 * Number of time steps the config asks for; 0 for NULL.
 *
 * # Safety
 * `cfg` must be NULL or a live handle.
 */
size_t tv_config_steps(const struct TvConfig *cfg);

/**
 * Override the time step; fails when the config no longer validates.
 *
 * # Safety
 * `cfg` must be NULL or a live handle.
 */
enum TvStatus tv_config_set_tau(struct TvConfig *cfg, double tau);

/**
 * # Safety
 * `cfg` must be NULL or a handle not yet freed.
 */
void tv_config_free(struct TvConfig *cfg);

/**
 * Start a run from `cfg`. The config handle may be freed afterwards.
 *
 * # Safety
 * `cfg` must be a live handle and `out` a writable pointer.
 */
enum TvStatus tv_run_new(const struct TvConfig *cfg, struct TvRun **out);

/**
 * Advance one step. Returns `Finished` once the horizon is reached.
 *
 * # Safety
 * `run` must be a live handle.
 */
enum TvStatus tv_run_step(struct TvRun *run);

/**
 * Advance to the horizon.
 *
 * # Safety
 * `run` must be a live handle.
 */
enum TvStatus tv_run_to_end(struct TvRun *run);

/**
 * Completed steps; 0 for NULL.
 *
 * # Safety
 * `run` must be NULL or a live handle.
 */
size_t tv_run_steps_done(const struct TvRun *run);

/**
 * Grid nodes; 0 for NULL.
 *
 * # Safety
 * `run` must be NULL or a live handle.
 */
size_t tv_run_num_nodes(const struct TvRun *run);

/**
 * Copy the state of step `k`: `y` gets `2 * nodes` values (x then y
 * component per node), `theta` gets `nodes` values. Either may be NULL.
 *
 * # Safety
 * `run` must be a live handle; `y` and `theta`, when not NULL, must have
 * room for the stated number of doubles and `nodes` must match
 * [`tv_run_num_nodes`].
 */
enum TvStatus tv_run_state(const struct TvRun *run,
                           size_t k,
                           size_t nodes,
                           double *y,
                           double *theta);

/**
 * Audit the steps taken so far.
 *
 * # Safety
 * `run` must be a live handle and `out` a writable pointer.
 */
enum TvStatus tv_run_summary(const struct TvRun *run, struct TvSummary *out);

/**
 * # Safety
 * `run` must be NULL or a handle not yet freed.
 */
void tv_run_free(struct TvRun *run);

/**
 * Full run with ledger, snapshots and manifest written into `out_dir`.
 * Returns the command line exit code (0 success, 1 output, 2 config,
 * 3 step failure, 4 invariant failure), or -1 for bad arguments.
 *
 * # Safety
 * `cfg` must be a live handle and `out_dir` a NUL-terminated string.
 */
int32_t tv_run_to_dir(const struct TvConfig *cfg, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* THERMOVISCO_H */
