#ifndef STOCH_STOKES_H
#define STOCH_STOKES_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SsStatus {
  SS_STATUS_OK = 0,
  SS_STATUS_NULL_POINTER = 1,
  SS_STATUS_INVALID_ARGUMENT = 2,
  SS_STATUS_CONFIG_ERROR = 3,
  SS_STATUS_SOLVER_ERROR = 4,
  SS_STATUS_INVARIANT_VIOLATION = 5,
  SS_STATUS_IO_ERROR = 6,
  SS_STATUS_PANIC = 7,
} SsStatus;

typedef enum SsStudyKind {
  SS_STUDY_KIND_TEMPORAL = 0,
  SS_STUDY_KIND_BALANCED = 1,
  SS_STUDY_KIND_FIXED_H = 2,
} SsStudyKind;

typedef enum SsStatistic {
  SS_STATISTIC_AU = 0,
  SS_STATISTIC_BU = 1,
  SS_STATISTIC_AP = 2,
  SS_STATISTIC_BP = 3,
} SsStatistic;

/**
 * Opaque experiment configuration.
 */
typedef struct SsConfig SsConfig;

/**
 * Opaque result of a Monte Carlo study.
 */
typedef struct SsStudy SsStudy;

/**
 * Root-mean-square errors of one level.
 */
typedef struct SsLevelStats {
  double k;
  double h;
  size_t n_p;
  double au;
  double bu;
  double ap;
  double bp;
} SsLevelStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` and returns its
 * full length in bytes (0 if there was none).
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t ss_last_error_message(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ss_version(void);

/**
 * Creates a configuration from a built-in preset name.
 *
 * # Safety
 * `name` must be a NUL-terminated string; `out` must be writable.
 */
enum SsStatus ss_config_from_preset(const char *name, struct SsConfig **out);

/**
 * Parses and validates a TOML configuration.
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out` must be writable.
 */
enum SsStatus ss_config_from_toml(const char *text, struct SsConfig **out);

/**
 * # Safety
 * `cfg` must be a live handle.
 */
enum SsStatus ss_config_set_seed(struct SsConfig *cfg, uint64_t seed);

/**
 * # Safety
 * `cfg` must be a live handle.
 */
enum SsStatus ss_config_set_realizations(struct SsConfig *cfg, size_t n_p);

/**
 * Writes the effective configuration as TOML into `buf`; `written`
 * receives the full length. Call with a null `buf` to query the size.
 *
 * # Safety
 * `cfg` must be a live handle, `buf` null or `len` writable bytes,
 * `written` null or writable.
 */
enum SsStatus ss_config_to_toml(const struct SsConfig *cfg, char *buf, size_t len, size_t *written);

/**
 * Writes the 16-digit configuration hash (plus NUL) into `buf`.
 *
 * # Safety
 * `cfg` must be a live handle and `buf` point to `len >= 17` bytes.
 */
enum SsStatus ss_config_hash(const struct SsConfig *cfg, char *buf, size_t len);

/**
 * # Safety
 * `cfg` must be null or a handle not yet freed.
 */
void ss_config_free(struct SsConfig *cfg);

/**
 * Runs a Monte Carlo study (`threads = 0` uses all cores).
 *
 * # Safety
 * `cfg` must be a live handle; `out` must be writable.
 */
enum SsStatus ss_study_run(const struct SsConfig *cfg,
                           enum SsStudyKind kind,
                           size_t threads,
                           struct SsStudy **out);

/**
 * Number of levels in a study, 0 for a null handle.
 *
 * # Safety
 * `study` must be null or a live handle.
 */
size_t ss_study_level_count(const struct SsStudy *study);

/**
 * # Safety
 * `study` must be a live handle; `out` must be writable.
 */
enum SsStatus ss_study_level(const struct SsStudy *study, size_t index, struct SsLevelStats *out);

/**
 * Log-log slope of a statistic against `k`; fails if no rate was fitted.
 *
 * # Safety
 * `study` must be a live handle; `slope` must be writable.
 */
enum SsStatus ss_study_slope(const struct SsStudy *study,
                             enum SsStatistic statistic,
                             double *slope);

/**
 * Writes the study statistics as CSV.
 *
 * # Safety
 * `study` must be a live handle; `path` a NUL-terminated string.
 */
enum SsStatus ss_study_write_csv(const struct SsStudy *study, const char *path);

/**
 * # Safety
 * `study` must be null or a handle not yet freed.
 */
void ss_study_free(struct SsStudy *study);

/**
 * Discrete inf-sup constant of the configuration's domain with `cells`
 * cells per unit length and no-slip walls.
 *
 * # Safety
 * `cfg` must be a live handle; `gamma` must be writable.
 */
enum SsStatus ss_infsup(const struct SsConfig *cfg, size_t cells, double *gamma);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STOCH_STOKES_H */
