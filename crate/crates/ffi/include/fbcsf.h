#ifndef FBCSF_H
#define FBCSF_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define FBCSF_OK 0

#define FBCSF_ERR_NULL 1

#define FBCSF_ERR_UTF8 2

#define FBCSF_ERR_RANGE 3

#define FBCSF_ERR_PANIC 4

/**
 * Parsed run configuration.
 */
typedef struct FbcsfConfig FbcsfConfig;

/**
 * Result of a solver run.
 */
typedef struct FbcsfTrajectory FbcsfTrajectory;

/**
 * One row of trajectory diagnostics.
 */
typedef struct {
  double t;
  double theta_lo;
  double theta_hi;
  /**
   * Angular width of the arc.
   */
  double big_theta;
  /**
   * Enclosed area between the curve and the barrier.
   */
  double area;
  double kappa_min;
  double kappa_max;
} FbcsfSample;

/**
 * Extinction time and point.
 */
typedef struct {
  double t_ext;
  double x;
  double y;
} FbcsfExtinction;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *fbcsf_version(void);

/**
 * Message of the last failure on this thread (empty after a success).
 * Valid until the next call into the library from the same thread.
 */
const char *fbcsf_last_error(void);

/**
 * Parses configuration text.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a valid pointer.
 */
int32_t fbcsf_config_parse(const char *text, FbcsfConfig **out);

/**
 * Releases a configuration. Null is ignored.
 *
 * # Safety
 * `cfg` must come from [`fbcsf_config_parse`] and not be used afterwards.
 */
void fbcsf_config_free(FbcsfConfig *cfg);

/**
 * Writes the canonical text of `cfg` into `buf` (NUL-terminated, truncated to
 * `len`) and the full length without the terminator into `needed`.
 *
 * # Safety
 * `buf` must hold `len` bytes (or be null with `len == 0`).
 */
int32_t fbcsf_config_text(const FbcsfConfig *cfg, char *buf, size_t len, size_t *needed);

/**
 * Builds the initial data of `cfg` and runs the solver.
 *
 * # Safety
 * `cfg` must be a live handle and `out` a valid pointer.
 */
int32_t fbcsf_simulate(const FbcsfConfig *cfg, FbcsfTrajectory **out);

/**
 * Releases a trajectory. Null is ignored.
 *
 * # Safety
 * `traj` must come from [`fbcsf_simulate`] and not be used afterwards.
 */
void fbcsf_trajectory_free(FbcsfTrajectory *traj);

/**
 * Number of diagnostics rows (0 for a null handle).
 *
 * # Safety
 * `traj` must be null or a live handle.
 */
size_t fbcsf_trajectory_len(const FbcsfTrajectory *traj);

/**
 * Copies diagnostics row `index`.
 *
 * # Safety
 * `traj` must be a live handle and `out` a valid pointer.
 */
int32_t fbcsf_trajectory_sample(const FbcsfTrajectory *traj, size_t index, FbcsfSample *out);

/**
 * Estimates the extinction time and point of a finished run.
 *
 * # Safety
 * Handles must be live and `out` a valid pointer.
 */
int32_t fbcsf_estimate_extinction(const FbcsfConfig *cfg,
                                  const FbcsfTrajectory *traj,
                                  FbcsfExtinction *out);

/**
 * Fitted decay exponent of `cos(j theta)` under the linearized flow
 * (`j^2 - 2` in the continuum).
 *
 * # Safety
 * `out` must be a valid pointer.
 */
int32_t fbcsf_linear_mode_exponent(size_t j, size_t n, double horizon, size_t steps, double *out);

/**
 * Runs every enabled stage into `out_dir` (the configured directory when
 * null) and stores the CLI exit status in `exit_code`: 0 when all enabled
 * acceptance flags pass, otherwise the failing stage's code or 4. A failing
 * stage also makes the call itself return that stage's library error.
 *
 * # Safety
 * `cfg` must be a live handle, `out_dir` null or NUL-terminated, `exit_code` valid.
 */
int32_t fbcsf_run_pipeline(const FbcsfConfig *cfg, const char *out_dir, int32_t *exit_code);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FBCSF_H */
