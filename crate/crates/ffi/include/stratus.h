#ifndef STRATUS_H
#define STRATUS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes shared by every function of this interface.
typedef enum StratusStatus {
  STRATUS_STATUS_OK = 0,
  STRATUS_STATUS_NULL_POINTER = 1,
  STRATUS_STATUS_INVALID_INPUT = 2,
  STRATUS_STATUS_CONFIG = 3,
  STRATUS_STATUS_SHAPE = 4,
  STRATUS_STATUS_GEOMETRY_MISMATCH = 5,
  STRATUS_STATUS_OUT_OF_COVERAGE = 6,
  STRATUS_STATUS_MISSING_FEATURE = 7,
  STRATUS_STATUS_NOT_CONVERGED = 8,
  STRATUS_STATUS_DIVERGED = 9,
  STRATUS_STATUS_UNDEFINED = 10,
  STRATUS_STATUS_UNMATCHED = 11,
  STRATUS_STATUS_IO = 12,
  STRATUS_STATUS_PARSE = 13,
  STRATUS_STATUS_PANIC = 14,
} StratusStatus;

// Isotonic calibration map.
typedef struct StratusCalibration StratusCalibration;

// Fitted random forest classifier.
typedef struct StratusForest StratusForest;

// Fitted penalized logistic regression.
typedef struct StratusLinearModel StratusLinearModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread, or NULL. The pointer stays
// valid until the next failing call on the same thread.
const char *stratus_last_error(void);

// Library version as a static NUL-terminated string.
const char *stratus_version(void);

// Mean squared difference between probabilities and 0/1 labels.
//
// # Safety
// `predictions` and `labels` must point to `n` readable values; `out` must be writable.
enum StratusStatus stratus_brier(const double *predictions,
                                 const uint8_t *labels,
                                 uintptr_t n,
                                 double *out);

// Skill score `1 - model / baseline`.
//
// # Safety
// `out` must be writable.
enum StratusStatus stratus_bss(double model_brier, double baseline_brier, double *out);

// Fit an isotonic map of labels on predictions.
//
// # Safety
// Inputs must point to `n` readable values; `out` must be writable.
enum StratusStatus stratus_calibration_fit(const double *predictions,
                                           const uint8_t *labels,
                                           uintptr_t n,
                                           struct StratusCalibration **out);

// Apply a calibration map to `n` probabilities.
//
// # Safety
// `map` must come from [`stratus_calibration_fit`]; `input_p` and `output_p` must hold `n` values.
enum StratusStatus stratus_calibration_apply(const struct StratusCalibration *map,
                                             const double *input_p,
                                             double *output_p,
                                             uintptr_t n);

// # Safety
// `map` must come from [`stratus_calibration_fit`] or be NULL; it must not be used afterwards.
void stratus_calibration_free(struct StratusCalibration *map);

// Fit a logistic regression with inverse penalty strength `c` (full batch).
//
// # Safety
// `data` must hold `n_rows * n_cols` values, `labels` `n_rows`; `out` must be writable.
enum StratusStatus stratus_linear_fit(const double *data,
                                      const uint8_t *labels,
                                      uintptr_t n_rows,
                                      uintptr_t n_cols,
                                      double c,
                                      struct StratusLinearModel **out);

// Probabilities for `n_rows` rows.
//
// # Safety
// `model` must be a live handle; `data` holds `n_rows * n_cols` values, `out` `n_rows`.
enum StratusStatus stratus_linear_predict(const struct StratusLinearModel *model,
                                          const double *data,
                                          uintptr_t n_rows,
                                          uintptr_t n_cols,
                                          double *out);

// Copy the intercept and `n_cols` coefficients.
//
// # Safety
// `model` must be a live handle; `intercept` writable; `coefficients` holds `n_cols` values.
enum StratusStatus stratus_linear_coefficients(const struct StratusLinearModel *model,
                                               double *intercept,
                                               double *coefficients,
                                               uintptr_t n_cols);

// # Safety
// `model` must come from [`stratus_linear_fit`] or be NULL; it must not be used afterwards.
void stratus_linear_free(struct StratusLinearModel *model);

// Fit a random forest with the default configuration except for the tree
// count, the per-tree sample count (0 means all rows) and the seed.
//
// # Safety
// `data` must hold `n_rows * n_cols` values, `labels` `n_rows`; `out` must be writable.
enum StratusStatus stratus_forest_fit(const double *data,
                                      const uint8_t *labels,
                                      uintptr_t n_rows,
                                      uintptr_t n_cols,
                                      uintptr_t n_estimators,
                                      uintptr_t max_samples,
                                      uint64_t seed,
                                      struct StratusForest **out);

// Positive-class probabilities for `n_rows` rows.
//
// # Safety
// `forest` must be a live handle; `data` holds `n_rows * n_cols` values, `out` `n_rows`.
enum StratusStatus stratus_forest_predict(const struct StratusForest *forest,
                                          const double *data,
                                          uintptr_t n_rows,
                                          uintptr_t n_cols,
                                          double *out);

// Mean decrease in impurity per column, normalized to sum 1.
//
// # Safety
// `forest` must be a live handle; `out` holds `n_cols` values.
enum StratusStatus stratus_forest_mdi(const struct StratusForest *forest,
                                      double *out,
                                      uintptr_t n_cols);

// # Safety
// `forest` must come from [`stratus_forest_fit`] or be NULL; it must not be used afterwards.
void stratus_forest_free(struct StratusForest *forest);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STRATUS_H */
