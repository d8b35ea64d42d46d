#ifndef AUV_NSB_H
#define AUV_NSB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AuvStatus {
  AUV_STATUS_OK = 0,
  AUV_STATUS_NULL_POINTER = 1,
  AUV_STATUS_CONFIG = 2,
  /**
   * The simulation left its domain (pitch, non-finite state, irregular path).
   */
  AUV_STATUS_RUNTIME = 3,
  AUV_STATUS_IO = 4,
  AUV_STATUS_UTF8 = 5,
  AUV_STATUS_OUT_OF_RANGE = 6,
  AUV_STATUS_PANIC = 7,
} AuvStatus;

/**
 * Opaque simulation log handle.
 */
typedef struct AuvLog AuvLog;

/**
 * Opaque scenario handle.
 */
typedef struct AuvScenario AuvScenario;

typedef struct AuvStabilityReport {
  size_t n;
  double kappa_max;
  double iota_max;
  double theta_p_max;
  double ratio_v_min;
  double ratio_w_min;
  double delta0;
  double delta0_lower_bound;
  bool damping_ok;
  bool kappa_ok;
  bool iota_ok;
  bool theta_p_ok;
  bool delta0_ok;
  bool overall_ok;
} AuvStabilityReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * Valid until the next call on the same thread.
 */
const char *auv_last_error(void);

/**
 * Built-in default scenario (three vehicles on the spiral).
 *
 * # Safety
 * `out` must be a valid pointer to write the handle to.
 */
enum AuvStatus auv_scenario_default(struct AuvScenario **out);

/**
 * Parses a scenario from TOML text. Relative `vehicle_file` entries resolve
 * against the working directory.
 *
 * # Safety
 * `toml` must be a NUL-terminated string, `out` a valid pointer.
 */
enum AuvStatus auv_scenario_from_toml(const char *toml, struct AuvScenario **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string, `out` a valid pointer.
 */
enum AuvStatus auv_scenario_from_file(const char *path, struct AuvScenario **out);

/**
 * Applies a `key=value` override such as `guidance.delta0=6`. The
 * scenario is left unchanged on failure.
 *
 * # Safety
 * `sc` must be a live handle, `assignment` a NUL-terminated string.
 */
enum AuvStatus auv_scenario_set(struct AuvScenario *sc, const char *assignment);

/**
 * # Safety
 * `sc` must be a live handle.
 */
size_t auv_scenario_n_vehicles(const struct AuvScenario *sc);

/**
 * # Safety
 * `sc` must be null or a handle not yet freed.
 */
void auv_scenario_free(struct AuvScenario *sc);

/**
 * Runs the scenario to completion.
 *
 * # Safety
 * `sc` must be a live handle, `out` a valid pointer.
 */
enum AuvStatus auv_run(const struct AuvScenario *sc, struct AuvLog **out);

/**
 * # Safety
 * `log` must be a live handle.
 */
size_t auv_log_rows(const struct AuvLog *log);

/**
 * # Safety
 * `log` must be a live handle.
 */
size_t auv_log_columns(const struct AuvLog *log);

/**
 * # Safety
 * `log` must be a live handle.
 */
size_t auv_log_n_vehicles(const struct AuvLog *log);

/**
 * Name of CSV column `col`, or null when out of range. Owned by the log.
 *
 * # Safety
 * `log` must be a live handle.
 */
const char *auv_log_column_name(const struct AuvLog *log, size_t col);

/**
 * Value at `(row, col)` in CSV column order; `colav_active` reads 0 or 1.
 *
 * # Safety
 * `log` must be a live handle, `out` a valid pointer.
 */
enum AuvStatus auv_log_value(const struct AuvLog *log, size_t row, size_t col, double *out);

/**
 * # Safety
 * `log` must be a live handle, `path` a NUL-terminated string.
 */
enum AuvStatus auv_log_write_csv(const struct AuvLog *log, const char *path);

/**
 * Metrics summary as a JSON string. Release it with [`auv_string_free`].
 *
 * # Safety
 * `log` must be a live handle, `sc` null or a live handle, `out` a valid
 * pointer.
 */
enum AuvStatus auv_log_metrics_json(const struct AuvLog *log,
                                    const struct AuvScenario *sc,
                                    char **out);

/**
 * # Safety
 * `log` must be null or a handle not yet freed.
 */
void auv_log_free(struct AuvLog *log);

/**
 * # Safety
 * `s` must be null or a string returned by this library and not yet freed.
 */
void auv_string_free(char *s);

/**
 * Lower bound on the lookahead distance; infinity when the curvature
 * conditions fail.
 */
double auv_lookahead_lower_bound(size_t n,
                                 double ratio_v,
                                 double ratio_w,
                                 double iota_max,
                                 double kappa_max);

/**
 * Evaluates the stability conditions for the scenario's fleet, path,
 * current and lookahead, scanning surge speeds up to `u_max`.
 *
 * # Safety
 * `sc` must be a live handle, `out` a valid pointer.
 */
enum AuvStatus auv_check(const struct AuvScenario *sc,
                         double u_max,
                         struct AuvStabilityReport *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AUV_NSB_H */
