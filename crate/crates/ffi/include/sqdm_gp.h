#ifndef SQDM_GP_H
#define SQDM_GP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum SqdmStatus {
  SqdmStatus_Ok = 0,
  SqdmStatus_NullPointer = 1,
  SqdmStatus_InvalidArgument = 2,
  SqdmStatus_Dimension = 3,
  SqdmStatus_NotPositiveDefinite = 4,
  SqdmStatus_NotAGrid = 5,
  SqdmStatus_Parse = 6,
  SqdmStatus_Io = 7,
  SqdmStatus_Internal = 8,
} SqdmStatus;

/**
 * Inference method for [`sqdm_model_fit`].
 */
typedef enum SqdmMethod {
  /**
   * Exact GP, isotropic squared exponential (one length).
   */
  SqdmMethod_ExactIso = 0,
  /**
   * Exact GP, one length per axis.
   */
  SqdmMethod_ExactArd = 1,
  /**
   * FITC, isotropic kernel; extras are the inducing inputs.
   */
  SqdmMethod_Fitc = 2,
  /**
   * Sparse spectrum; extras are the spectral points.
   */
  SqdmMethod_Ssgpr = 3,
  /**
   * Kronecker inference on a full grid, one length per axis.
   */
  SqdmMethod_Kronecker = 4,
} SqdmMethod;

typedef enum SqdmPolarity {
  SqdmPolarity_Negative = 0,
  SqdmPolarity_Positive = 1,
} SqdmPolarity;

/**
 * Opaque fitted model.
 */
typedef struct SqdmModel SqdmModel;

/**
 * Opaque phantom.
 */
typedef struct SqdmPhantom SqdmPhantom;

/**
 * Opaque scan outcome.
 */
typedef struct SqdmScanResult SqdmScanResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL after a
 * success. Valid until the next call on the same thread.
 */
const char *sqdm_last_error(void);

/**
 * Fits a GP at fixed hyperparameters.
 *
 * `lengths` holds 1 (isotropic) or 2 (per-axis) length scales. `extras`
 * holds `n_extras` points: inducing inputs for FITC, spectral points for
 * SSGPR; ignored otherwise. `inputs` holds `n` points, `targets` `n`
 * values.
 *
 * # Safety
 * Pointers must be valid for the stated lengths; `out` must be writable.
 */
enum SqdmStatus sqdm_model_fit(enum SqdmMethod method,
                               double mean,
                               double sigma_f,
                               const double *lengths,
                               uintptr_t n_lengths,
                               double sigma_n,
                               const double *extras,
                               uintptr_t n_extras,
                               const double *inputs,
                               const double *targets,
                               uintptr_t n,
                               struct SqdmModel **out_model);

/**
 * Latent mean and variance at `n` test points.
 *
 * # Safety
 * `model` must come from [`sqdm_model_fit`]; buffers hold `n` values
 * (`2n` for `test`). `var_out` may be NULL.
 */
enum SqdmStatus sqdm_model_predict(const struct SqdmModel *model,
                                   const double *test,
                                   uintptr_t n,
                                   double *mean_out,
                                   double *var_out);

/**
 * Log marginal likelihood of the training targets.
 *
 * # Safety
 * `model` from [`sqdm_model_fit`]; `out_value` writable.
 */
enum SqdmStatus sqdm_model_log_likelihood(const struct SqdmModel *model, double *out_value);

/**
 * # Safety
 * `model` must be NULL or come from [`sqdm_model_fit`], and not be used
 * afterwards.
 */
void sqdm_model_free(struct SqdmModel *model);

/**
 * Generates a phantom. `kind` is 0 for the 63x63 R1-like map, 1 for the
 * 200x200 R2-like map.
 *
 * # Safety
 * `out_phantom` must be writable.
 */
enum SqdmStatus sqdm_phantom_new(uint32_t kind, uint64_t seed, struct SqdmPhantom **out_phantom);

/**
 * Loads a phantom directory written by `sqdm-gp phantom` or
 * [`sqdm_phantom_save`].
 *
 * # Safety
 * `dir` is a NUL-terminated path; `out_phantom` writable.
 */
enum SqdmStatus sqdm_phantom_load(const char *dir, struct SqdmPhantom **out_phantom);

/**
 * # Safety
 * `phantom` valid; `dir` a NUL-terminated path to an existing directory.
 */
enum SqdmStatus sqdm_phantom_save(const struct SqdmPhantom *phantom, const char *dir);

/**
 * Map size in pixels.
 *
 * # Safety
 * `phantom` valid; `nx` and `ny` writable.
 */
enum SqdmStatus sqdm_phantom_size(const struct SqdmPhantom *phantom, uintptr_t *nx, uintptr_t *ny);

/**
 * Copies a ground-truth map, row-major (`ny` rows of `nx`), into `buf`.
 *
 * # Safety
 * `phantom` valid; `buf` holds `len` values, `len == nx * ny`.
 */
enum SqdmStatus sqdm_phantom_map(const struct SqdmPhantom *phantom,
                                 enum SqdmPolarity polarity,
                                 double *buf,
                                 uintptr_t len);

/**
 * # Safety
 * `phantom` NULL or from a `sqdm_phantom_*` constructor, unused afterwards.
 */
void sqdm_phantom_free(struct SqdmPhantom *phantom);

/**
 * Simulates a closed-loop scan. `model` names the feedforward: feedback,
 * none, sod-sw, sod-egp, sod-cluster, kronecker, fitc, ssgpr or oracle.
 * A lost lock is reported through [`sqdm_scan_result_aborted`], not as an
 * error.
 *
 * # Safety
 * `phantom` valid; `model` NUL-terminated; `out_result` writable.
 */
enum SqdmStatus sqdm_scan_run(const struct SqdmPhantom *phantom,
                              const char *model,
                              enum SqdmPolarity polarity,
                              double total_time_s,
                              uint64_t seed,
                              struct SqdmScanResult **out_result);

/**
 * Line at which the lock was lost, or -1 for a complete scan.
 *
 * # Safety
 * `result` valid; `line` writable.
 */
enum SqdmStatus sqdm_scan_result_aborted(const struct SqdmScanResult *result, int64_t *line);

/**
 * Copies the tracked image, row-major; unscanned lines are NaN.
 *
 * # Safety
 * `result` valid; `buf` holds `len == nx * ny` values.
 */
enum SqdmStatus sqdm_scan_result_image(const struct SqdmScanResult *result,
                                       double *buf,
                                       uintptr_t len);

/**
 * MSE of the completed lines against the phantom the scan ran on.
 *
 * # Safety
 * `result` and `phantom` valid; `out_value` writable.
 */
enum SqdmStatus sqdm_scan_result_mse(const struct SqdmScanResult *result,
                                     const struct SqdmPhantom *phantom,
                                     double *out_value);

/**
 * # Safety
 * `result` NULL or from [`sqdm_scan_run`], unused afterwards.
 */
void sqdm_scan_result_free(struct SqdmScanResult *result);

/**
 * Mean squared difference of two `len`-element arrays.
 *
 * # Safety
 * `a` and `b` hold `len` values; `out_value` writable.
 */
enum SqdmStatus sqdm_mse(const double *a, const double *b, uintptr_t len, double *out_value);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SQDM_GP_H */
