#ifndef HEMS_H
#define HEMS_H

/* Generated by cbindgen from hems-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of a fallible call. Anything other than `Ok` leaves a message in
// the thread-local error slot.
typedef enum HemsStatus {
  // The call succeeded.
  HEMS_STATUS_OK = 0,
  // A required pointer argument was null.
  HEMS_STATUS_NULL_ARGUMENT = 1,
  // A string argument was not valid UTF-8.
  HEMS_STATUS_INVALID_STRING = 2,
  // An argument value was out of range.
  HEMS_STATUS_INVALID_ARGUMENT = 3,
  // The operation itself failed; see `hems_last_error`.
  HEMS_STATUS_FAILURE = 4,
} HemsStatus;

// Opaque handle to a trained control policy.
typedef struct HemsPolicy HemsPolicy;

// Opaque handle to a trained thermal surrogate.
typedef struct HemsSurrogate HemsSurrogate;

// Opaque handle to an hourly exogenous trace set.
typedef struct HemsTraces HemsTraces;

// Evaluation totals: `tec` is the summed energy cost ($), `mtd` the mean
// temperature deviation (°C), `total_dev` the summed deviation, and `slots`
// the number of hourly slots evaluated.
typedef struct HemsMetrics {
  double tec;
  double mtd;
  double total_dev;
  size_t slots;
} HemsMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the current thread's last error message (NUL-terminated) into
// `buf` and returns the full message length in bytes excluding the NUL.
// When `buf` is null or too small nothing is truncated mid-call: the
// message is copied up to `cap - 1` bytes and always NUL-terminated, and
// the return value tells the caller the size a full copy needs.
//
// # Safety
// `buf` must be null or point to `cap` writable bytes.
size_t hems_last_error(char *buf, size_t cap);

// Loads a trace CSV in the format `hems synth` writes. Returns null on
// failure (see `hems_last_error`).
//
// # Safety
// `path` must be a NUL-terminated string.
struct HemsTraces *hems_traces_load(const char *path);

// Generates `days` synthetic summer days under the default scenario shape.
// Returns null on failure.
struct HemsTraces *hems_traces_synth(uint64_t seed, size_t days);

// Number of hourly slots in the trace set; 0 for a null handle.
//
// # Safety
// `traces` must be null or a live handle from this library.
size_t hems_traces_slots(const struct HemsTraces *traces);

// Releases a trace handle. Null is ignored.
//
// # Safety
// `traces` must be null or an unreleased handle from this library.
void hems_traces_free(struct HemsTraces *traces);

// Loads a surrogate model JSON written by `hems train-surrogate`. Returns
// null on failure.
//
// # Safety
// `path` must be a NUL-terminated string.
struct HemsSurrogate *hems_surrogate_load(const char *path);

// Predicts the next indoor temperature from the current indoor and outdoor
// temperatures (°C) and HVAC power (kW).
//
// # Safety
// `surrogate` must be a live handle; `out` must point to a writable double.
enum HemsStatus hems_surrogate_next_t_in(const struct HemsSurrogate *surrogate,
                                         double t_in,
                                         double t_out,
                                         double h,
                                         double *out);

// Releases a surrogate handle. Null is ignored.
//
// # Safety
// `surrogate` must be null or an unreleased handle from this library.
void hems_surrogate_free(struct HemsSurrogate *surrogate);

// Loads a policy JSON written by `hems train` or `hems train-baseline`.
// Returns null on failure.
//
// # Safety
// `path` must be a NUL-terminated string.
struct HemsPolicy *hems_policy_load(const char *path);

// Deterministic action for one state. `state` holds 7 doubles in the order
// PV power (kW), load (kW), battery level (kWh), outdoor °C, indoor °C,
// buy price ($/kWh), hour of day (0–23). `action` receives 2 doubles:
// battery power (kW, charge positive) and HVAC power (kW).
//
// # Safety
// `policy` must be a live handle; `state` must point to 7 readable doubles
// and `action` to 2 writable doubles.
enum HemsStatus hems_policy_action(const struct HemsPolicy *policy,
                                   const double *state,
                                   double *action);

// Releases a policy handle. Null is ignored.
//
// # Safety
// `policy` must be null or an unreleased handle from this library.
void hems_policy_free(struct HemsPolicy *policy);

// Evaluates the policy (deterministic actions) over the whole trace in the
// default noise-free home and writes the metrics to `out`.
//
// # Safety
// `policy` and `traces` must be live handles; `out` must point to a
// writable `HemsMetrics`.
enum HemsStatus hems_evaluate_policy(const struct HemsPolicy *policy,
                                     const struct HemsTraces *traces,
                                     uint64_t seed,
                                     struct HemsMetrics *out);

// Evaluates the default rule-based controller over the whole trace in the
// default noise-free home and writes the metrics to `out`.
//
// # Safety
// `traces` must be a live handle; `out` must point to a writable
// `HemsMetrics`.
enum HemsStatus hems_evaluate_rule(const struct HemsTraces *traces,
                                   uint64_t seed,
                                   struct HemsMetrics *out);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* HEMS_H */
