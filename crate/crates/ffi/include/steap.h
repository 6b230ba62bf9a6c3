#ifndef STEAP_H
#define STEAP_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by every fallible function.
 */
typedef enum SteapStatus {
  STEAP_STATUS_OK = 0,
  STEAP_STATUS_NULL_POINTER = 1,
  STEAP_STATUS_INVALID_ARGUMENT = 2,
  STEAP_STATUS_PARSE = 3,
  STEAP_STATUS_IO = 4,
  STEAP_STATUS_NUMERICAL = 5,
  /**
   * The library panicked; the handle arguments should be considered unusable.
   */
  STEAP_STATUS_PANIC = 6,
} SteapStatus;

/**
 * Closed-loop mode of a run.
 */
typedef enum SteapMode {
  STEAP_MODE_OPEN_LOOP = 0,
  STEAP_MODE_SLAP = 1,
  STEAP_MODE_STEAP = 2,
} SteapMode;

/**
 * Benchmark configuration (problem template, world generator and sweep settings).
 */
typedef struct SteapConfig SteapConfig;

/**
 * Record of one closed-loop run.
 */
typedef struct SteapRun SteapRun;

/**
 * Signed distance field over a 2D grid.
 */
typedef struct SteapSdf SteapSdf;

/**
 * Summary of a finished run. Estimation fields are NaN when the mode has none.
 */
typedef struct SteapMetrics {
  bool success;
  size_t steps;
  double goal_err_trans;
  double goal_err_rot;
  double est_err_trans;
  double est_err_rot;
  double meas_err_trans;
  double mean_step_time;
} SteapMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *steap_version(void);

/**
 * Message of the last failed call on this thread, or NULL. Valid until the next call.
 */
const char *steap_last_error_message(void);

/**
 * Releases a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void steap_string_free(char *s);

/**
 * Default benchmark configuration.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage.
 */
enum SteapStatus steap_config_default(struct SteapConfig **out);

/**
 * Parses a TOML configuration; missing keys take their defaults.
 *
 * # Safety
 * `toml` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SteapStatus steap_config_from_toml(const char *toml, struct SteapConfig **out);

/**
 * Serializes a configuration to TOML; free the result with `steap_string_free`.
 *
 * # Safety
 * `config` must be a live handle and `out` a valid pointer.
 */
enum SteapStatus steap_config_to_toml(const struct SteapConfig *config, char **out);

/**
 * # Safety
 * `config` must be NULL or a live handle; it is invalid afterwards.
 */
void steap_config_free(struct SteapConfig *config);

/**
 * Runs one episode on the world generated for `seed`; `mode` is a `SteapMode` value.
 *
 * # Safety
 * `config` must be a live handle and `out` a valid pointer.
 */
enum SteapStatus steap_run(const struct SteapConfig *config,
                           uint32_t mode,
                           uint64_t seed,
                           double n_dyn,
                           double n_cam,
                           struct SteapRun **out);

/**
 * # Safety
 * `run` must be a live handle and `out` a valid pointer.
 */
enum SteapStatus steap_run_metrics(const struct SteapRun *run, struct SteapMetrics *out);

/**
 * Number of configurations on the ground-truth trajectory (start included).
 *
 * # Safety
 * `run` must be NULL or a live handle.
 */
size_t steap_run_len(const struct SteapRun *run);

/**
 * Writes ground-truth configuration `index` as `[x, y, theta, q1, ..]` into `out`.
 *
 * `capacity` is the length of `out`; `written` receives the configuration size.
 *
 * # Safety
 * `run` must be a live handle, `out` must hold `capacity` doubles and `written` be valid.
 */
enum SteapStatus steap_run_ground_truth(const struct SteapRun *run,
                                        size_t index,
                                        double *out,
                                        size_t capacity,
                                        size_t *written);

/**
 * Serializes the full run record to JSON; free the result with `steap_string_free`.
 *
 * # Safety
 * `run` must be a live handle and `out` a valid pointer.
 */
enum SteapStatus steap_run_to_json(const struct SteapRun *run, char **out);

/**
 * # Safety
 * `run` must be NULL or a live handle; it is invalid afterwards.
 */
void steap_run_free(struct SteapRun *run);

/**
 * Signed distance field of a row-major occupancy grid (non-zero = occupied).
 *
 * `origin_x`, `origin_y` locate the centre of cell (0, 0).
 *
 * # Safety
 * `occupied` must hold `nx * ny` bytes and `out` be a valid pointer.
 */
enum SteapStatus steap_sdf_from_occupancy(const uint8_t *occupied,
                                          size_t nx,
                                          size_t ny,
                                          double origin_x,
                                          double origin_y,
                                          double cell_size,
                                          struct SteapSdf **out);

/**
 * Interpolated distance and gradient at `(x, y)`. `gradient` may be NULL.
 *
 * # Safety
 * `sdf` must be a live handle, `distance` valid and `gradient` NULL or two doubles.
 */
enum SteapStatus steap_sdf_query(const struct SteapSdf *sdf,
                                 double x,
                                 double y,
                                 double *distance,
                                 double *gradient);

/**
 * # Safety
 * `sdf` must be NULL or a live handle; it is invalid afterwards.
 */
void steap_sdf_free(struct SteapSdf *sdf);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STEAP_H */
