#ifndef WORLDPROBE_H
#define WORLDPROBE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  WP_STATUS_OK = 0,
  WP_STATUS_NULL_POINTER = 1,
  WP_STATUS_INVALID_ARGUMENT = 2,
  WP_STATUS_SHAPE_MISMATCH = 3,
  WP_STATUS_TOO_FEW_SAMPLES = 4,
  WP_STATUS_DEGENERATE = 5,
  WP_STATUS_IO = 6,
  WP_STATUS_PARSE = 7,
  WP_STATUS_PANIC = 8,
  WP_STATUS_INTERNAL = 9,
} WpStatus;

/**
 * A loaded or generated trajectory dataset.
 */
typedef struct WpDataset WpDataset;

/**
 * A fitted EDMD Koopman matrix with its observable dictionary.
 */
typedef struct WpKoopman WpKoopman;

typedef struct {
  double r2;
  double se;
  double lower;
  double upper;
  size_t block_length;
} WpBootstrapResult;

typedef struct {
  size_t episodes;
  size_t total_steps;
  size_t embed_dim;
  size_t patch_count;
  size_t layer_count;
} WpDatasetInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into the library from the same thread.
 */
const char *wp_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *wp_version(void);

/**
 * Variance-weighted R² of `yhat` against `y`, both `[n x d]`.
 *
 * # Safety
 * `y` and `yhat` must point to `n * d` doubles; `out` to one double.
 */
WpStatus wp_r2_score(const double *y, const double *yhat, size_t n, size_t d, double *out);

/**
 * Moving-block bootstrap of R² with one confidence level.
 *
 * # Safety
 * `y` and `yhat` must point to `n * d` doubles; `out` to one
 * `WpBootstrapResult`.
 */
WpStatus wp_block_bootstrap(const double *y,
                            const double *yhat,
                            size_t n,
                            size_t d,
                            size_t n_reps,
                            double level,
                            uint64_t seed,
                            WpBootstrapResult *out);

/**
 * Fisher's combined p-value of `k` independent p-values.
 *
 * # Safety
 * `p_values` must point to `k` doubles; `out` to one double.
 */
WpStatus wp_fisher_combine(const double *p_values, size_t k, double *out);

/**
 * Overlapping Allan deviation of a scalar series at each averaging time.
 *
 * # Safety
 * `series` must point to `n` doubles, `taus` to `n_taus` sizes and `out` to
 * `n_taus` writable doubles.
 */
WpStatus wp_allan_deviation(const double *series,
                            size_t n,
                            const size_t *taus,
                            size_t n_taus,
                            double *out);

/**
 * Generate a synthetic dataset in memory from a JSON system spec.
 *
 * # Safety
 * `spec_json` must be a NUL-terminated string; `out` a writable handle slot.
 */
WpStatus wp_synth_generate(const char *spec_json, size_t episodes, size_t length, WpDataset **out);

/**
 * Generate a synthetic dataset straight to a directory.
 *
 * # Safety
 * `spec_json` and `out_dir` must be NUL-terminated strings.
 */
WpStatus wp_synth_write(const char *spec_json, size_t episodes, size_t length, const char *out_dir);

/**
 * Load and validate a dataset directory.
 *
 * # Safety
 * `dir` must be a NUL-terminated string; `out` a writable handle slot.
 */
WpStatus wp_dataset_load(const char *dir, WpDataset **out);

/**
 * # Safety
 * `ds` must be a live handle; `dir` a NUL-terminated string.
 */
WpStatus wp_dataset_write(const WpDataset *ds, const char *dir);

/**
 * # Safety
 * `ds` must be a live handle; `out` a writable `WpDatasetInfo`.
 */
WpStatus wp_dataset_info(const WpDataset *ds, WpDatasetInfo *out);

/**
 * Release a dataset handle. Null is ignored.
 *
 * # Safety
 * `ds` must come from this library and not be used afterwards.
 */
void wp_dataset_free(WpDataset *ds);

/**
 * Fit an EDMD Koopman matrix on `m` state pairs `x[i] -> y[i]` of dimension
 * `dim`, `k` steps apart. `basis_json` describes the dictionary, e.g.
 * `{"kind": "fourier_torus", "m": 3}`.
 *
 * # Safety
 * `x` and `y` must point to `m * dim` doubles; `basis_json` must be a
 * NUL-terminated string; `out` a writable handle slot.
 */
WpStatus wp_koopman_fit(const char *basis_json,
                        const double *x,
                        const double *y,
                        size_t m,
                        size_t dim,
                        size_t k,
                        WpKoopman **out);

/**
 * Number of observables `N` in the fitted dictionary.
 *
 * # Safety
 * `model` must be a live handle; `out` a writable size.
 */
WpStatus wp_koopman_size(const WpKoopman *model, size_t *out);

/**
 * Copy the `[N x N]` Koopman matrix into `out`, row-major.
 *
 * # Safety
 * `model` must be a live handle; `out` must hold `N * N` doubles.
 */
WpStatus wp_koopman_matrix(const WpKoopman *model, double *out);

/**
 * Push dictionary coefficients of an observable `steps` applications of
 * the fitted operator forward.
 *
 * # Safety
 * `model` must be a live handle; `coeffs` and `out` must hold `n` doubles.
 */
WpStatus wp_koopman_k_step(const WpKoopman *model,
                           const double *coeffs,
                           size_t n,
                           uint32_t steps,
                           double *out);

/**
 * Release a Koopman handle. Null is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void wp_koopman_free(WpKoopman *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* WORLDPROBE_H */
