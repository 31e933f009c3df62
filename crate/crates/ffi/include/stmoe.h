#ifndef STMOE_H
#define STMOE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum StmoeStatus {
  STMOE_STATUS_OK = 0,
  STMOE_STATUS_NULL_POINTER = 1,
  STMOE_STATUS_INVALID_ARGUMENT = 2,
  STMOE_STATUS_DIMENSION = 3,
  STMOE_STATUS_NUMERICAL = 4,
  STMOE_STATUS_FIT_FAILED = 5,
  STMOE_STATUS_UNDEFINED_MOMENT = 6,
  STMOE_STATUS_IO = 7,
  STMOE_STATUS_BUFFER_TOO_SMALL = 8,
  STMOE_STATUS_PANIC = 99,
} StmoeStatus;

typedef enum StmoeFamily {
  STMOE_FAMILY_NORMAL = 0,
  STMOE_FAMILY_SKEW_T = 1,
} StmoeFamily;

/**
 * Observations `(y, X, R)`.
 */
typedef struct StmoeDataset StmoeDataset;

/**
 * Model parameters plus, when produced by a fit, its log-likelihood.
 */
typedef struct StmoeModel StmoeModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len - 1` bytes) and returns the full message length.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t stmoe_last_error_message(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *stmoe_version(void);

/**
 * Builds a dataset from `y` (length `n`), `x` (`n × p`) and `r` (`n × q`).
 *
 * # Safety
 * Pointers must be valid for the given lengths; `out` must be writable.
 */
enum StmoeStatus stmoe_dataset_new(const double *y,
                                   const double *x,
                                   const double *r,
                                   size_t n,
                                   size_t p,
                                   size_t q,
                                   struct StmoeDataset **out);

/**
 * Dataset with `x = r = (1, t)`.
 *
 * # Safety
 * `t` and `y` must be valid for `n` values; `out` must be writable.
 */
enum StmoeStatus stmoe_dataset_from_scalar(const double *t,
                                           const double *y,
                                           size_t n,
                                           struct StmoeDataset **out);

/**
 * # Safety
 * `data` must be null or a handle from this library not yet freed.
 */
void stmoe_dataset_free(struct StmoeDataset *data);

/**
 * Multi-start ECM fit with `k` experts. `family` is a [`StmoeFamily`] value;
 * `tol <= 0` and `max_iter == 0` select the defaults.
 *
 * # Safety
 * `data` must be a live dataset handle; `out` must be writable.
 */
enum StmoeStatus stmoe_fit(const struct StmoeDataset *data,
                           int32_t family,
                           size_t k,
                           size_t n_starts,
                           uint64_t seed,
                           double tol,
                           size_t max_iter,
                           struct StmoeModel **out);

/**
 * # Safety
 * `model` must be null or a handle from this library not yet freed.
 */
void stmoe_model_free(struct StmoeModel *model);

/**
 * Number of experts, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live model handle.
 */
size_t stmoe_model_k(const struct StmoeModel *model);

/**
 * Log-likelihood reached by the fit (NaN for models loaded from JSON) and
 * whether it converged.
 *
 * # Safety
 * `model` must be a live model handle; outputs must be writable or null.
 */
enum StmoeStatus stmoe_model_fit_info(const struct StmoeModel *model,
                                      double *loglik,
                                      bool *converged);

/**
 * Observed-data log-likelihood of `data` under `model`.
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum StmoeStatus stmoe_model_loglik(const struct StmoeModel *model,
                                    const struct StmoeDataset *data,
                                    double *out);

/**
 * Predictive mean and variance at one point. `variance` receives NaN when
 * the variance does not exist.
 *
 * # Safety
 * `x` must hold `p` values and `r` `q` values; outputs must be writable.
 */
enum StmoeStatus stmoe_model_predict(const struct StmoeModel *model,
                                     const double *x,
                                     size_t p,
                                     const double *r,
                                     size_t q,
                                     double *mean,
                                     double *variance);

/**
 * Serializes the model as JSON into `buf` (NUL-terminated). `needed`
 * receives the byte length including the terminator; when `len` is too
 * small nothing is written and `BufferTooSmall` is returned.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes; `needed` must be writable.
 */
enum StmoeStatus stmoe_model_to_json(const struct StmoeModel *model,
                                     char *buf,
                                     size_t len,
                                     size_t *needed);

/**
 * Parses a model from a NUL-terminated JSON document.
 *
 * # Safety
 * `json` must be a valid C string; `out` must be writable.
 */
enum StmoeStatus stmoe_model_from_json(const char *json, struct StmoeModel **out);

/**
 * Skew-t density at `y`.
 *
 * # Safety
 * `out` must be writable.
 */
enum StmoeStatus stmoe_skew_t_pdf(double y,
                                  double mu,
                                  double sigma2,
                                  double lambda,
                                  double nu,
                                  double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STMOE_H */
