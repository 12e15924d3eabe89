#ifndef NETRTK_H
#define NETRTK_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum NetrtkAttack {
  NETRTK_ATTACK_NONE = 0,
  NETRTK_ATTACK_SYNC_SPOOF = 1,
  NETRTK_ATTACK_ASYNC_SPOOF = 2,
  NETRTK_ATTACK_JAM = 3,
} NetrtkAttack;

typedef enum NetrtkMode {
  NETRTK_MODE_NONE = 0,
  NETRTK_MODE_STANDALONE = 1,
  NETRTK_MODE_DGNSS = 2,
  NETRTK_MODE_FLOAT = 3,
  NETRTK_MODE_FIXED = 4,
} NetrtkMode;

typedef enum NetrtkStatus {
  NETRTK_STATUS_OK = 0,
  NETRTK_STATUS_NULL_POINTER = 1,
  NETRTK_STATUS_INVALID_UTF8 = 2,
  NETRTK_STATUS_INVALID_SCENARIO = 3,
  NETRTK_STATUS_TRANSPORT = 4,
  NETRTK_STATUS_IO = 5,
  NETRTK_STATUS_OUT_OF_RANGE = 6,
  NETRTK_STATUS_UNKNOWN_KEY = 7,
  NETRTK_STATUS_BUFFER_TOO_SMALL = 8,
  NETRTK_STATUS_PANIC = 9,
} NetrtkStatus;

typedef enum NetrtkTransport {
  NETRTK_TRANSPORT_IN_PROCESS = 0,
  NETRTK_TRANSPORT_TCP = 1,
} NetrtkTransport;

/**
 * The records and summary of a finished run.
 */
typedef struct NetrtkRun NetrtkRun;

/**
 * A parsed scenario.
 */
typedef struct NetrtkScenario NetrtkScenario;

/**
 * One rover epoch. Position fields are NaN when the rover had no solution.
 */
typedef struct NetrtkEpoch {
  /**
   * s since scenario start
   */
  double t;
  double truth_ecef[3];
  double solution_ecef[3];
  /**
   * m, local east/north/up at the truth position
   */
  double error_enu[3];
  enum NetrtkMode mode;
  uint32_t n_sats;
  bool accepted;
  bool station_healthy;
  uint32_t station_tracked;
  enum NetrtkAttack attack;
} NetrtkEpoch;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *netrtk_version(void);

/**
 * Copies the calling thread's last error message into `buf`.
 *
 * # Safety
 * `buf` must be valid for `cap` bytes or null; `needed` must be null or writable.
 */
enum NetrtkStatus netrtk_last_error(char *buf, size_t cap, size_t *needed);

/**
 * Parses a scenario from TOML text.
 *
 * # Safety
 * `toml` must be a NUL-terminated string; `out` must be writable.
 */
enum NetrtkStatus netrtk_scenario_from_str(const char *toml, struct NetrtkScenario **out);

/**
 * Loads a scenario file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum NetrtkStatus netrtk_scenario_load(const char *path, struct NetrtkScenario **out);

/**
 * # Safety
 * `scenario` must come from a `netrtk_scenario_*` constructor.
 */
enum NetrtkStatus netrtk_scenario_set_seed(struct NetrtkScenario *scenario, uint64_t seed);

/**
 * # Safety
 * `scenario` must come from a `netrtk_scenario_*` constructor.
 */
enum NetrtkStatus netrtk_scenario_set_gate(struct NetrtkScenario *scenario, bool enabled);

/**
 * # Safety
 * `scenario` must come from a `netrtk_scenario_*` constructor.
 */
enum NetrtkStatus netrtk_scenario_set_transport(struct NetrtkScenario *scenario,
                                                enum NetrtkTransport transport);

/**
 * Number of epochs the scenario will simulate.
 *
 * # Safety
 * `scenario` must be null or come from a `netrtk_scenario_*` constructor.
 */
size_t netrtk_scenario_epochs(const struct NetrtkScenario *scenario);

/**
 * # Safety
 * `scenario` must be null or come from a `netrtk_scenario_*` constructor,
 * and must not be used afterwards.
 */
void netrtk_scenario_free(struct NetrtkScenario *scenario);

/**
 * Runs the scenario to completion. The scenario handle stays valid.
 *
 * # Safety
 * `scenario` must come from a `netrtk_scenario_*` constructor; `out` must be writable.
 */
enum NetrtkStatus netrtk_run(const struct NetrtkScenario *scenario, struct NetrtkRun **out);

/**
 * # Safety
 * `run` must be null or come from `netrtk_run`.
 */
size_t netrtk_run_epoch_count(const struct NetrtkRun *run);

/**
 * # Safety
 * `run` must come from `netrtk_run`; `out` must be writable.
 */
enum NetrtkStatus netrtk_run_epoch(const struct NetrtkRun *run,
                                   size_t index,
                                   struct NetrtkEpoch *out);

/**
 * Numeric summary metric by key, e.g. `rms_3d_attack` or `fix_ratio`.
 * Metrics undefined for this run come back as NaN.
 *
 * # Safety
 * `run` must come from `netrtk_run`; `key` must be a NUL-terminated string;
 * `value` must be writable.
 */
enum NetrtkStatus netrtk_run_summary_value(const struct NetrtkRun *run,
                                           const char *key,
                                           double *value);

/**
 * Copies the `key: value` summary into `buf`.
 *
 * # Safety
 * `run` must come from `netrtk_run`; `buf` must be valid for `cap` bytes or
 * null; `needed` must be null or writable.
 */
enum NetrtkStatus netrtk_run_summary_text(const struct NetrtkRun *run,
                                          char *buf,
                                          size_t cap,
                                          size_t *needed);

/**
 * Writes the per-epoch records as CSV.
 *
 * # Safety
 * `run` must come from `netrtk_run`; `path` must be a NUL-terminated string.
 */
enum NetrtkStatus netrtk_run_write_csv(const struct NetrtkRun *run, const char *path);

/**
 * # Safety
 * `run` must be null or come from `netrtk_run`, and must not be used afterwards.
 */
void netrtk_run_free(struct NetrtkRun *run);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NETRTK_H */
