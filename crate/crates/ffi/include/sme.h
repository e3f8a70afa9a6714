#ifndef SME_H
#define SME_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SmeStatus {
  SME_STATUS_OK = 0,
  SME_STATUS_NULL_POINTER = 1,
  SME_STATUS_INVALID_ARGUMENT = 2,
  SME_STATUS_NUMERICAL = 3,
  SME_STATUS_INCONSISTENT = 4,
  SME_STATUS_PANIC = 5,
} SmeStatus;

typedef enum SmePrediction {
  SME_PREDICTION_VOLUME = 0,
  SME_PREDICTION_TRACE = 1,
} SmePrediction;

typedef enum SmeCorrection {
  SME_CORRECTION_SIGMA = 0,
  SME_CORRECTION_VOLUME = 1,
  SME_CORRECTION_SSAL = 2,
} SmeCorrection;

typedef enum SmePolicy {
  SME_POLICY_SKIP = 0,
  SME_POLICY_ABORT = 1,
} SmePolicy;

/**
 * Opaque estimator handle.
 */
typedef struct SmeEstimator SmeEstimator;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Creates an estimator for `E(center, sigma0 · shape)`.
 *
 * # Safety
 * `center` must point to `n` doubles, `shape` to `n * n` doubles and `out`
 * to writable storage for one handle pointer.
 */
enum SmeStatus sme_estimator_new(size_t n,
                                 const double *center,
                                 const double *shape,
                                 double sigma0,
                                 enum SmePrediction pred,
                                 enum SmeCorrection corr,
                                 enum SmePolicy policy,
                                 struct SmeEstimator **out);

/**
 * Releases a handle; null is ignored.
 *
 * # Safety
 * `handle` must come from `sme_estimator_new` and not be used afterwards.
 */
void sme_estimator_free(struct SmeEstimator *handle);

/**
 * One predict/correct step.
 *
 * `a` is `n × n`, `r` is `n × m`, `b` is `n × l`, `tau` has `l` entries.
 * Measurement `i` is `lowers[i] ≤ directions[i, :] · x ≤ uppers[i]`, with
 * `directions` a `p × n` matrix; infinite bounds are allowed.
 *
 * # Safety
 * Every pointer must reference at least the number of doubles stated above;
 * pointers paired with a zero length may be null.
 */
enum SmeStatus sme_estimator_step(struct SmeEstimator *handle,
                                  const double *a,
                                  const double *r,
                                  size_t m,
                                  const double *b,
                                  const double *tau,
                                  size_t l,
                                  const double *directions,
                                  const double *lowers,
                                  const double *uppers,
                                  size_t p);

/**
 * State dimension.
 *
 * # Safety
 * `handle` must be valid and `out` writable.
 */
enum SmeStatus sme_estimator_dim(const struct SmeEstimator *handle, size_t *out);

/**
 * Copies the center into `out` (`len` must be at least `n`).
 *
 * # Safety
 * `out` must hold `len` doubles.
 */
enum SmeStatus sme_estimator_center(const struct SmeEstimator *handle, double *out, size_t len);

/**
 * Copies the unit-scale shape matrix (row-major, `len ≥ n²`).
 *
 * # Safety
 * `out` must hold `len` doubles.
 */
enum SmeStatus sme_estimator_shape(const struct SmeEstimator *handle, double *out, size_t len);

/**
 * Scale of the stored representation; the set is `E(center, scale · shape)`.
 *
 * # Safety
 * `handle` must be valid and `out` writable.
 */
enum SmeStatus sme_estimator_scale(const struct SmeEstimator *handle, double *out);

/**
 * Tracked scale `ς_k` of the unnormalised recursion.
 *
 * # Safety
 * `handle` must be valid and `out` writable.
 */
enum SmeStatus sme_estimator_sigma(const struct SmeEstimator *handle, double *out);

/**
 * Tracked rank of the shape matrix.
 *
 * # Safety
 * `handle` must be valid and `out` writable.
 */
enum SmeStatus sme_estimator_rank(const struct SmeEstimator *handle, size_t *out);

/**
 * Real roots of `b3 x³ + b2 x² + b1 x + b0`, ascending, into `roots[0..*count]`.
 *
 * # Safety
 * `roots` must hold 3 doubles; `count` and `discriminant` must be writable
 * (`discriminant` may be null).
 */
enum SmeStatus sme_solve_cubic(double b3,
                               double b2,
                               double b1,
                               double b0,
                               double *roots,
                               size_t *count,
                               double *discriminant);

/**
 * Copies the last error message of this thread, NUL-terminated and
 * truncated to `len`. Returns the full message length plus one.
 *
 * # Safety
 * `buf` must hold `len` bytes, or be null with `len == 0`.
 */
size_t sme_last_error_message(char *buf, size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SME_H */
