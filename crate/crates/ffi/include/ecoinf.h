#ifndef ECOINF_H
#define ECOINF_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum EcoinfStatus {
  ECOINF_STATUS_OK = 0,
  /**
   * A required pointer was null.
   */
  ECOINF_STATUS_NULL = 1,
  ECOINF_STATUS_DOMAIN = 2,
  ECOINF_STATUS_VALIDATION = 3,
  ECOINF_STATUS_EVALUATION = 4,
  ECOINF_STATUS_CAPABILITY = 5,
  ECOINF_STATUS_IO = 6,
  ECOINF_STATUS_PANIC = 7,
} EcoinfStatus;

typedef enum EcoinfMethod {
  ECOINF_METHOD_GAUSS = 0,
  ECOINF_METHOD_GAUSS_BT = 1,
  ECOINF_METHOD_GAUSS_BT_EXACT = 2,
  ECOINF_METHOD_AGGREGATE_LR = 3,
} EcoinfMethod;

/**
 * Precinct data: covariates (intercept included by the caller) and counts.
 */
typedef struct EcoinfDataset EcoinfDataset;

/**
 * A fitted logistic model and its report.
 */
typedef struct EcoinfFit EcoinfFit;

/**
 * Fit settings; start from `ecoinf_fit_options_default`.
 */
typedef struct EcoinfFitOptions {
  /**
   * An `EcoinfMethod` value.
   */
  uint32_t method;
  size_t iters_total;
  size_t iters_phase1;
  size_t iters_phase3;
  double lr;
  double phi2_floor;
  uint64_t seed;
} EcoinfFitOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, a static NUL-terminated string.
 */
const char *ecoinf_version(void);

/**
 * Copies the calling thread's last error message into `buf` (truncated and
 * NUL-terminated) and returns the buffer size needed for the whole message.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t ecoinf_last_error(char *buf, size_t len);

/**
 * `ln P(S = k)` for the sum of `n` independent Bernoulli(`p[j]`) variables.
 *
 * # Safety
 * `p` must point to `n` values and `out` to one writable value.
 */
enum EcoinfStatus ecoinf_poibin_log_pmf(const double *p, size_t n, size_t k, double *out);

/**
 * Writes `P(S = 0), …, P(S = n)` into `out`, which holds `n + 1` values.
 *
 * # Safety
 * `p` must point to `n` values and `out` to `n + 1` writable values.
 */
enum EcoinfStatus ecoinf_poibin_pmf(const double *p, size_t n, double *out);

/**
 * Builds a dataset from `n_precincts` precincts. Voter rows are stored
 * row-major in `x`, precinct after precinct, `dim` values each; precinct `i`
 * has `sizes[i]` voters and observed total `counts[i]`.
 *
 * # Safety
 * `x` must hold `dim · Σ sizes` values, `sizes` and `counts` `n_precincts`
 * values each, and `out` must be writable.
 */
enum EcoinfStatus ecoinf_dataset_from_arrays(const double *x,
                                             size_t dim,
                                             const size_t *sizes,
                                             const size_t *counts,
                                             size_t n_precincts,
                                             struct EcoinfDataset **out);

/**
 * Loads `voters.csv` and `counts.csv`; an intercept column is prepended.
 *
 * # Safety
 * Paths must be NUL-terminated strings and `out` must be writable.
 */
enum EcoinfStatus ecoinf_dataset_load(const char *voters,
                                      const char *counts,
                                      bool standardize,
                                      struct EcoinfDataset **out);

/**
 * # Safety
 * `ds` must be null or a handle from this library, not yet freed.
 */
void ecoinf_dataset_free(struct EcoinfDataset *ds);

/**
 * Number of design columns, or 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or a live handle.
 */
size_t ecoinf_dataset_dim(const struct EcoinfDataset *ds);

/**
 * # Safety
 * `ds` must be null or a live handle.
 */
size_t ecoinf_dataset_precincts(const struct EcoinfDataset *ds);

/**
 * # Safety
 * `ds` must be null or a live handle.
 */
size_t ecoinf_dataset_voters(const struct EcoinfDataset *ds);

/**
 * Exact log-likelihood at `beta`.
 *
 * # Safety
 * `ds` must be a live handle, `beta` must hold `dim` values and `out` be writable.
 */
enum EcoinfStatus ecoinf_exact_loglik(const struct EcoinfDataset *ds,
                                      const double *beta,
                                      size_t dim,
                                      double *out);

/**
 * Exact gradient at `beta`, written to `grad` (`dim` values).
 *
 * # Safety
 * As for `ecoinf_exact_loglik`, with `grad` holding `dim` writable values.
 */
enum EcoinfStatus ecoinf_exact_grad(const struct EcoinfDataset *ds,
                                    const double *beta,
                                    size_t dim,
                                    double *grad);

/**
 * Gaussian-approximation log-likelihood at `beta`, default variance floor.
 *
 * # Safety
 * As for `ecoinf_exact_loglik`.
 */
enum EcoinfStatus ecoinf_approx_loglik(const struct EcoinfDataset *ds,
                                       const double *beta,
                                       size_t dim,
                                       double *out);

/**
 * Gradient of the Gaussian approximation at `beta`.
 *
 * # Safety
 * As for `ecoinf_exact_grad`.
 */
enum EcoinfStatus ecoinf_approx_grad(const struct EcoinfDataset *ds,
                                     const double *beta,
                                     size_t dim,
                                     double *grad);

/**
 * Library defaults, with `method` (an `EcoinfMethod` value) filled in.
 */
struct EcoinfFitOptions ecoinf_fit_options_default(uint32_t method);

/**
 * Fits a logistic model. A diverged fit still succeeds; check
 * `ecoinf_fit_diverged`.
 *
 * # Safety
 * `ds` must be a live handle, `opts` readable and `out` writable.
 */
enum EcoinfStatus ecoinf_fit(const struct EcoinfDataset *ds,
                             const struct EcoinfFitOptions *opts,
                             struct EcoinfFit **out);

/**
 * # Safety
 * `fit` must be null or a handle from `ecoinf_fit`, not yet freed.
 */
void ecoinf_fit_free(struct EcoinfFit *fit);

/**
 * Number of fitted coefficients, or 0 for a null handle.
 *
 * # Safety
 * `fit` must be null or a live handle.
 */
size_t ecoinf_fit_dim(const struct EcoinfFit *fit);

/**
 * Copies the coefficients into `beta`, which holds `dim` values.
 *
 * # Safety
 * `fit` must be a live handle and `beta` hold `dim` writable values.
 */
enum EcoinfStatus ecoinf_fit_beta(const struct EcoinfFit *fit, double *beta, size_t dim);

/**
 * 1 if the fit was flagged as diverged, 0 otherwise (and for null).
 *
 * # Safety
 * `fit` must be null or a live handle.
 */
int32_t ecoinf_fit_diverged(const struct EcoinfFit *fit);

/**
 * Final value of the objective the method optimized.
 *
 * # Safety
 * `fit` must be a live handle and `out` writable.
 */
enum EcoinfStatus ecoinf_fit_final_objective(const struct EcoinfFit *fit, double *out);

/**
 * The fit report as a JSON string; release it with `ecoinf_string_free`.
 *
 * # Safety
 * `fit` must be a live handle and `out` writable.
 */
enum EcoinfStatus ecoinf_fit_report_json(const struct EcoinfFit *fit, char **out);

/**
 * Per-voter probabilities for every voter of `ds`, in dataset order.
 *
 * # Safety
 * Handles must be live and `out` hold `len` writable values, where `len`
 * equals `ecoinf_dataset_voters(ds)`.
 */
enum EcoinfStatus ecoinf_fit_predict(const struct EcoinfFit *fit,
                                     const struct EcoinfDataset *ds,
                                     double *out,
                                     size_t len);

/**
 * ROC AUC of `scores` against 0/1 `labels`.
 *
 * # Safety
 * `scores` and `labels` must hold `n` values each and `out` be writable.
 */
enum EcoinfStatus ecoinf_roc_auc(const double *scores,
                                 const uint8_t *labels,
                                 size_t n,
                                 double *out);

/**
 * Releases a string returned by this library.
 *
 * # Safety
 * `s` must be null or a string from this library, not yet freed.
 */
void ecoinf_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ECOINF_H */
