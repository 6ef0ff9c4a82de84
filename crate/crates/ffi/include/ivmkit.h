#ifndef IVMKIT_H
#define IVMKIT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum IvmkitKernel {
  IVMKIT_KERNEL_LINEAR = 0,
  IVMKIT_KERNEL_RADIAL = 1,
} IvmkitKernel;

typedef enum IvmkitMode {
  /**
   * Exact up to 200 training points, one-step above.
   */
  IVMKIT_MODE_AUTO = 0,
  IVMKIT_MODE_EXACT = 1,
  IVMKIT_MODE_ONE_STEP = 2,
} IvmkitMode;

/**
 * Result of every fallible call.
 */
typedef enum IvmkitStatus {
  IVMKIT_STATUS_OK = 0,
  IVMKIT_STATUS_NULL_POINTER = 1,
  IVMKIT_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Bad input data: shape, labels, non-finite values.
   */
  IVMKIT_STATUS_DATA_ERROR = 3,
  /**
   * Singular systems, failed candidates, non-convergence.
   */
  IVMKIT_STATUS_NUMERICAL_ERROR = 4,
  IVMKIT_STATUS_IO_ERROR = 5,
  /**
   * Malformed model file.
   */
  IVMKIT_STATUS_FORMAT_ERROR = 6,
  IVMKIT_STATUS_PANIC = 7,
} IvmkitStatus;

/**
 * Opaque fitted model.
 */
typedef struct IvmkitModel IvmkitModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Fits an import vector machine. `gamma` is ignored for the linear kernel.
 * `max_import` of 0 means no cap. On success `*out` owns a new model.
 *
 * # Safety
 * `x` must point to `n * d` doubles, `y` to `n` bytes, `out` to writable storage.
 */
enum IvmkitStatus ivmkit_fit_ivm(const double *x,
                                 const uint8_t *y,
                                 size_t n,
                                 size_t d,
                                 enum IvmkitKernel kernel_kind,
                                 double gamma,
                                 double lambda,
                                 enum IvmkitMode mode,
                                 double conv_tol,
                                 size_t max_import,
                                 struct IvmkitModel **out);

/**
 * Fits a C-SVM with SMO. `gamma` is ignored for the linear kernel.
 *
 * # Safety
 * As for [`ivmkit_fit_ivm`].
 */
enum IvmkitStatus ivmkit_fit_svm(const double *x,
                                 const uint8_t *y,
                                 size_t n,
                                 size_t d,
                                 enum IvmkitKernel kernel_kind,
                                 double gamma,
                                 double cost,
                                 struct IvmkitModel **out);

/**
 * Scores `n` rows: probabilities for an IVM, decision values for an SVM.
 *
 * # Safety
 * `model` must come from this library; `x` must hold `n * d` doubles and
 * `scores` room for `n`.
 */
enum IvmkitStatus ivmkit_predict(const struct IvmkitModel *model,
                                 const double *x,
                                 size_t n,
                                 size_t d,
                                 double *scores);

/**
 * Import vectors (IVM) or support vectors (SVM).
 *
 * # Safety
 * `model` must come from this library and `out` be writable.
 */
enum IvmkitStatus ivmkit_model_n_vectors(const struct IvmkitModel *model, size_t *out);

/**
 * Input dimension the model expects.
 *
 * # Safety
 * As for [`ivmkit_model_n_vectors`].
 */
enum IvmkitStatus ivmkit_model_dim(const struct IvmkitModel *model, size_t *out);

/**
 * 1 for an IVM, 0 for an SVM.
 *
 * # Safety
 * As for [`ivmkit_model_n_vectors`].
 */
enum IvmkitStatus ivmkit_model_is_ivm(const struct IvmkitModel *model, int32_t *out);

/**
 * Writes the model in the ivmkit text format.
 *
 * # Safety
 * `model` must come from this library; `path` must be a NUL-terminated string.
 */
enum IvmkitStatus ivmkit_model_save(const struct IvmkitModel *model, const char *path);

/**
 * Reads a model written by `ivmkit_model_save` or the `ivmkit` CLI.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum IvmkitStatus ivmkit_model_load(const char *path, struct IvmkitModel **out);

/**
 * Releases a model; null is a no-op.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void ivmkit_model_free(struct IvmkitModel *model);

/**
 * Area under the ROC curve of `scores` against 0/1 `labels`.
 *
 * # Safety
 * `scores` and `labels` must hold `n` elements; `out` must be writable.
 */
enum IvmkitStatus ivmkit_auc(const double *scores, const uint8_t *labels, size_t n, double *out);

/**
 * Message for the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *ivmkit_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ivmkit_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IVMKIT_H */
