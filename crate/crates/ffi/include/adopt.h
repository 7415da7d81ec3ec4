#ifndef ADOPT_H
#define ADOPT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AdoptStatus {
  ADOPT_STATUS_OK = 0,
  ADOPT_STATUS_NULL_POINTER = 1,
  ADOPT_STATUS_INVALID_ARGUMENT = 2,
  ADOPT_STATUS_DOMAIN = 3,
  ADOPT_STATUS_INFEASIBLE_BUDGET = 4,
  ADOPT_STATUS_PANIC = 5,
  ADOPT_STATUS_INTERNAL = 6,
} AdoptStatus;

/**
 * Coalition value samples collected for one `m`-step pipeline.
 */
typedef struct AdoptSampleSet AdoptSampleSet;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *adopt_last_error(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void adopt_string_free(char *s);

/**
 * New empty sample set; null if `m` is 0 or above 64.
 */
struct AdoptSampleSet *adopt_sample_set_new(size_t m);

/**
 * Adds one sample; bit `i` of `mask` marks step `i` as a member.
 *
 * # Safety
 * `set` must be a live pointer from [`adopt_sample_set_new`].
 */
enum AdoptStatus adopt_sample_set_push(struct AdoptSampleSet *set, uint64_t mask, double value);

/**
 * Number of samples in `set`, or 0 for null.
 *
 * # Safety
 * `set` must be null or a live pointer from [`adopt_sample_set_new`].
 */
size_t adopt_sample_set_len(const struct AdoptSampleSet *set);

/**
 * # Safety
 * `set` must be null or a live pointer from [`adopt_sample_set_new`].
 */
void adopt_sample_set_free(struct AdoptSampleSet *set);

/**
 * Kernel SHAP estimate from the samples in `set`; writes `m` values.
 *
 * # Safety
 * `set` must be live; `phi_out` must hold at least `m` doubles.
 */
enum AdoptStatus adopt_kernel_shap(const struct AdoptSampleSet *set, double *phi_out);

/**
 * Exact Shapley values from a full table: `values[mask]` for every mask
 * below `2^m`.
 *
 * # Safety
 * `values` must hold `2^m` doubles and `phi_out` at least `m`.
 */
enum AdoptStatus adopt_exact_shapley(const double *values, size_t m, double *phi_out);

/**
 * Shapley weight of a size-`s` coalition in an `m`-player game.
 *
 * # Safety
 * `out` must be a valid pointer to a double.
 */
enum AdoptStatus adopt_shapley_weight(size_t s, size_t m, double *out);

/**
 * Splits `total` candidates over `m` steps by contribution.
 *
 * # Safety
 * `phi` must hold `m` doubles and `budgets_out` room for `m` sizes.
 */
enum AdoptStatus adopt_allocate_budgets(const double *phi,
                                        size_t m,
                                        size_t total,
                                        size_t b_min,
                                        size_t *budgets_out);

/**
 * Scores `prediction` against `label` with the metric named `metric_id`
 * (`exact_match` or `token_f1`).
 *
 * # Safety
 * String arguments must be NUL-terminated; `out` must be valid.
 */
enum AdoptStatus adopt_metric_score(const char *metric_id,
                                    const char *prediction,
                                    const char *label,
                                    double *out);

/**
 * Runs the allocation simulator with default steps for `m` and reports the
 * mean and standard deviation of iterations to target.
 *
 * # Safety
 * `policy` must be NUL-terminated; output pointers must be valid.
 */
enum AdoptStatus adopt_simulate_allocation(const char *policy,
                                           size_t m,
                                           size_t runs,
                                           uint64_t seed,
                                           double *mean_out,
                                           double *std_out);

/**
 * Cache key of a request given as JSON
 * (`{"model_ref", "messages", "temperature", "top_p", "seed"}`). The
 * returned hex string must be freed with [`adopt_string_free`].
 *
 * # Safety
 * `request_json` must be NUL-terminated; `digest_out` must be valid.
 */
enum AdoptStatus adopt_request_digest(const char *request_json, char **digest_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ADOPT_H */
