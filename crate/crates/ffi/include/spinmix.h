#ifndef SPINMIX_H
#define SPINMIX_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SpinmixStatus {
  SPINMIX_STATUS_OK = 0,
  SPINMIX_STATUS_NULL_POINTER = 1,
  SPINMIX_STATUS_INVALID_ARGUMENT = 2,
  SPINMIX_STATUS_CAP_EXCEEDED = 3,
  SPINMIX_STATUS_UNSUPPORTED = 4,
  SPINMIX_STATUS_PARSE = 5,
  SPINMIX_STATUS_NUMERICAL = 6,
  SPINMIX_STATUS_IO = 7,
  SPINMIX_STATUS_PANIC = 8,
} SpinmixStatus;

typedef struct SpinmixSampler SpinmixSampler;

typedef struct SpinmixSystem SpinmixSystem;

typedef struct SpinmixTable SpinmixTable;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread. Valid until the next
 * call on the same thread.
 */
const char *spinmix_last_error(void);

/**
 * Builds a system from specs such as `grid:3x3` and `ising:0.4`.
 *
 * # Safety
 * Strings must be NUL-terminated; `out` must be writable.
 */
enum SpinmixStatus spinmix_system_new(const char *graph,
                                      const char *model,
                                      struct SpinmixSystem **out);

/**
 * # Safety
 * `sys` must come from [`spinmix_system_new`] or be null.
 */
void spinmix_system_free(struct SpinmixSystem *sys);

/**
 * Number of vertices, or 0 for a null handle.
 *
 * # Safety
 * `sys` must be a live handle or null.
 */
size_t spinmix_system_vertices(const struct SpinmixSystem *sys);

/**
 * Number of spins, or 0 for a null handle.
 *
 * # Safety
 * `sys` must be a live handle or null.
 */
size_t spinmix_system_spins(const struct SpinmixSystem *sys);

/**
 * Enumerates the Gibbs distribution when it has at most `cap` states.
 *
 * # Safety
 * `sys` must be a live handle and `out` writable.
 */
enum SpinmixStatus spinmix_table_new(const struct SpinmixSystem *sys,
                                     uint64_t cap,
                                     struct SpinmixTable **out);

/**
 * # Safety
 * `t` must come from [`spinmix_table_new`] or be null.
 */
void spinmix_table_free(struct SpinmixTable *t);

/**
 * Number of states in the support, or 0 for a null handle.
 *
 * # Safety
 * `t` must be a live handle or null.
 */
size_t spinmix_table_len(const struct SpinmixTable *t);

/**
 * Gibbs probability of a full configuration of `len` spins.
 *
 * # Safety
 * `config` must point to `len` readable bytes and `out` be writable.
 */
enum SpinmixStatus spinmix_table_prob(const struct SpinmixTable *t,
                                      const uint8_t *config,
                                      size_t len,
                                      double *out);

/**
 * Spectral independence constant over all pinnings.
 *
 * # Safety
 * `t` must be a live handle and `out` writable.
 */
enum SpinmixStatus spinmix_eta(const struct SpinmixTable *t, double *out);

/**
 * Absolute spectral gap of the named kernel on the enumerated system.
 *
 * # Safety
 * Handles must be live, `table` built from `sys`, and `out` writable.
 */
enum SpinmixStatus spinmix_spectral_gap(const struct SpinmixSystem *sys,
                                        const struct SpinmixTable *table,
                                        const char *kernel,
                                        double *out);

/**
 * A chain started from the first constant configuration in the support.
 *
 * # Safety
 * `sys` must be a live handle, `kernel` NUL-terminated, `out` writable.
 */
enum SpinmixStatus spinmix_sampler_new(const struct SpinmixSystem *sys,
                                       const char *kernel,
                                       uint64_t seed,
                                       struct SpinmixSampler **out);

/**
 * # Safety
 * `s` must come from [`spinmix_sampler_new`] or be null.
 */
void spinmix_sampler_free(struct SpinmixSampler *s);

/**
 * Advances the chain by `steps` kernel steps.
 *
 * # Safety
 * `s` must be a live handle not used concurrently.
 */
enum SpinmixStatus spinmix_sampler_step(struct SpinmixSampler *s, uint64_t steps);

/**
 * Copies the current configuration into `buf`, which holds `len` spins.
 *
 * # Safety
 * `buf` must point to `len` writable bytes.
 */
enum SpinmixStatus spinmix_sampler_state(const struct SpinmixSampler *s, uint8_t *buf, size_t len);

/**
 * Runs a TOML experiment config and returns the JSON report in `out`, to
 * be released with [`spinmix_string_free`].
 *
 * # Safety
 * `config` must be NUL-terminated and `out` writable.
 */
enum SpinmixStatus spinmix_run_config(const char *config, char **out);

/**
 * # Safety
 * `s` must come from this library or be null.
 */
void spinmix_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPINMIX_H */
