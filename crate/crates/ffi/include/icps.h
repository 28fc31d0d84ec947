#ifndef ICPS_H
#define ICPS_H

/* Generated by cbindgen from the icps-ffi crate. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum IcpsStatus {
  ICPS_STATUS_OK = 0,
  ICPS_STATUS_NULL_ARGUMENT = 1,
  ICPS_STATUS_INVALID_UTF8 = 2,
  ICPS_STATUS_PARSE_ERROR = 3,
  ICPS_STATUS_NO_PLAN = 4,
  ICPS_STATUS_INVALID_ENVELOPE = 5,
  ICPS_STATUS_SCENARIO_ERROR = 6,
  ICPS_STATUS_NOT_FINISHED = 7,
  ICPS_STATUS_PANIC = 99,
} IcpsStatus;

/**
 * A scenario run driven step by step.
 */
typedef struct IcpsRun IcpsRun;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. Valid until
 * the next call into this library on the same thread.
 */
const char *icps_last_error(void);

/**
 * Releases a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed already.
 */
void icps_string_free(char *s);

/**
 * Solves a planning problem given as JSON and writes the plan, a JSON
 * array of step strings, to `out_plan`.
 *
 * # Safety
 * `problem_json` must be a valid C string; `out_plan` a valid pointer.
 */
enum IcpsStatus icps_planner_solve_json(const char *problem_json, char **out_plan);

/**
 * Decodes one envelope line. On success `out` receives the canonical
 * re-encoding; on `ICPS_STATUS_INVALID_ENVELOPE` it receives the
 * structured error as JSON (`code`, `message`, `msg_id`).
 *
 * # Safety
 * `line` must be a valid C string; `out` a valid pointer.
 */
enum IcpsStatus icps_envelope_validate(const char *line, char **out);

/**
 * Starts a run of a scenario given as TOML text. `seed` overrides the
 * scenario's seed unless negative.
 *
 * # Safety
 * `scenario_toml` must be a valid C string; `out_run` a valid pointer.
 */
enum IcpsStatus icps_run_new(const char *scenario_toml, int64_t seed, struct IcpsRun **out_run);

/**
 * Advances the run by one simulated instant. `*out_more` is set to false
 * once the run has ended.
 *
 * # Safety
 * `run` must come from [`icps_run_new`]; `out_more` may be NULL.
 */
enum IcpsStatus icps_run_step(struct IcpsRun *run, bool *out_more);

/**
 * Runs to the end.
 *
 * # Safety
 * `run` must come from [`icps_run_new`].
 */
enum IcpsStatus icps_run_finish(struct IcpsRun *run);

/**
 * Current simulated time in milliseconds, or -1 for a NULL run.
 *
 * # Safety
 * `run` must come from [`icps_run_new`] or be NULL.
 */
int64_t icps_run_now_ms(const struct IcpsRun *run);

/**
 * Writes the run report as JSON. The run must have finished.
 *
 * # Safety
 * `run` must come from [`icps_run_new`]; `out` a valid pointer.
 */
enum IcpsStatus icps_run_report_json(struct IcpsRun *run, char **out);

/**
 * Writes the event log as NDJSON. The run must have finished.
 *
 * # Safety
 * `run` must come from [`icps_run_new`]; `out` a valid pointer.
 */
enum IcpsStatus icps_run_event_log(struct IcpsRun *run, char **out);

/**
 * Releases a run. NULL is ignored.
 *
 * # Safety
 * `run` must come from [`icps_run_new`] and not have been freed already.
 */
void icps_run_free(struct IcpsRun *run);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ICPS_H */
