#ifndef CFB_H
#define CFB_H

/* Generated by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Treatment arm selector.
 */
typedef enum CfbArm {
  CFB_ARM_TREATED = 0,
  CFB_ARM_CONTROL = 1,
} CfbArm;

/**
 * Outcome-model augmentation selector.
 */
typedef enum CfbAugmentation {
  CFB_AUGMENTATION_NONE = 0,
  CFB_AUGMENTATION_LM = 1,
  CFB_AUGMENTATION_KRR = 2,
} CfbAugmentation;

/**
 * Estimator family selector.
 */
typedef enum CfbMethod {
  CFB_METHOD_PROPOSED = 0,
  CFB_METHOD_ATE_RKHS = 1,
  CFB_METHOD_IPW = 2,
  CFB_METHOD_REG = 3,
} CfbMethod;

/**
 * Status code returned by every entry point.
 */
typedef enum CfbStatus {
  CFB_STATUS_OK = 0,
  CFB_STATUS_NULL_POINTER = 1,
  CFB_STATUS_INVALID_ARGUMENT = 2,
  CFB_STATUS_RUNTIME_ERROR = 3,
} CfbStatus;

/**
 * Opaque prepared-analysis handle; caches weight solves and fitted models.
 */
typedef struct CfbAnalysis CfbAnalysis;

/**
 * Opaque dataset handle.
 */
typedef struct CfbDataset CfbDataset;

/**
 * Opaque tuning-options handle.
 */
typedef struct CfbOptions CfbOptions;

/**
 * Solver diagnostics for one weight solve.
 */
typedef struct CfbWeightsDiagnostics {
  uintptr_t iterations;
  /**
   * 1 when the stall criterion was met within the iteration cap.
   */
  int32_t converged;
  /**
   * Best objective value reached.
   */
  double objective;
  /**
   * Top eigengap of the terminal inner matrix.
   */
  double eigengap;
} CfbWeightsDiagnostics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the most recent error message for this thread into `buffer` and
 * returns the number of bytes required including the trailing NUL. A zero
 * return means no error has been recorded.
 */
uintptr_t cfb_last_error_message(char *buffer, uintptr_t length);

/**
 * Builds a dataset from row-major covariates `x` (`n` rows, `d` columns),
 * a 0/1 treatment vector, outcomes, and the conditioning column indices.
 * `binary_flags` may be null (all columns continuous) or hold one 0/1 flag
 * per column.
 *
 * # Safety
 * All pointers must reference buffers of the documented lengths.
 */
enum CfbStatus cfb_dataset_new(const double *x,
                               uintptr_t n,
                               uintptr_t d,
                               const int32_t *treatment,
                               const double *outcome,
                               const uintptr_t *v_cols,
                               uintptr_t n_v_cols,
                               const uint8_t *binary_flags,
                               struct CfbDataset **out);

/**
 * # Safety
 * `ds` must be a pointer returned by [`cfb_dataset_new`], or null.
 */
void cfb_dataset_free(struct CfbDataset *ds);

/**
 * Fresh options handle with every knob at its built-in default.
 */
struct CfbOptions *cfb_options_new(void);

/**
 * # Safety
 * `opts` must be a pointer returned by [`cfb_options_new`], or null.
 */
void cfb_options_free(struct CfbOptions *opts);

/**
 * Smoothing bandwidth in scaled units; non-positive restores the automatic
 * reference rule.
 *
 * # Safety
 * `opts` must be a valid options handle.
 */
enum CfbStatus cfb_options_set_bandwidth(struct CfbOptions *opts, double h);

/**
 * Penalty levels; a non-positive value restores that penalty's automatic
 * rule.
 *
 * # Safety
 * `opts` must be a valid options handle.
 */
enum CfbStatus cfb_options_set_penalties(struct CfbOptions *opts, double lambda1, double lambda2);

/**
 * Quadrature points per conditioning dimension (minimum 51).
 *
 * # Safety
 * `opts` must be a valid options handle.
 */
enum CfbStatus cfb_options_set_quadrature(struct CfbOptions *opts, uintptr_t points);

/**
 * Subgradient solver controls.
 *
 * # Safety
 * `opts` must be a valid options handle.
 */
enum CfbStatus cfb_options_set_solver(struct CfbOptions *opts,
                                      uintptr_t max_iters,
                                      double step0,
                                      double tol_obj);

/**
 * Cap on the retained Gram rank; zero restores the full rank.
 *
 * # Safety
 * `opts` must be a valid options handle.
 */
enum CfbStatus cfb_options_set_rank_cap(struct CfbOptions *opts, uintptr_t r_max);

/**
 * Prepares an analysis: rescales the data, factorizes the Gram matrix, and
 * precomputes the smoothing state. `opts` may be null for defaults.
 *
 * # Safety
 * `ds` must be a valid dataset handle; `out` must be non-null.
 */
enum CfbStatus cfb_analysis_new(const struct CfbDataset *ds,
                                const struct CfbOptions *opts,
                                struct CfbAnalysis **out);

/**
 * # Safety
 * `analysis` must be a pointer returned by [`cfb_analysis_new`], or null.
 */
void cfb_analysis_free(struct CfbAnalysis *analysis);

/**
 * The bandwidth the analysis resolved to (scaled units).
 *
 * # Safety
 * `analysis` must be a valid analysis handle; `out` must be non-null.
 */
enum CfbStatus cfb_analysis_bandwidth(const struct CfbAnalysis *analysis, double *out);

/**
 * Writes the default evaluation grid (original units, 5th to 95th sample
 * quantiles) into `out_grid`, which must hold `points` doubles.
 *
 * # Safety
 * Pointers must reference buffers of the documented lengths.
 */
enum CfbStatus cfb_analysis_default_grid(const struct CfbAnalysis *analysis,
                                         uintptr_t points,
                                         double *out_grid);

/**
 * Estimates an effect curve on a caller-supplied grid in original units.
 * `out_estimates` must hold `grid_len` doubles.
 *
 * # Safety
 * Pointers must reference buffers of the documented lengths.
 */
enum CfbStatus cfb_analysis_curve(struct CfbAnalysis *analysis,
                                  enum CfbMethod method,
                                  enum CfbAugmentation augmentation,
                                  const double *grid,
                                  uintptr_t grid_len,
                                  double *out_estimates);

/**
 * Solves balancing weights for one arm. `method` must be `Proposed` or
 * `AteRkhs`. `out_weights` must hold one double per sample; inactive-arm
 * entries are written as 1. `out_diagnostics` may be null.
 *
 * # Safety
 * Pointers must reference buffers of the documented lengths.
 */
enum CfbStatus cfb_analysis_weights(struct CfbAnalysis *analysis,
                                    enum CfbMethod method,
                                    enum CfbArm arm,
                                    double *out_weights,
                                    struct CfbWeightsDiagnostics *out_diagnostics);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CFB_H */
