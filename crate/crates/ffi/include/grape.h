#ifndef GRAPE_H
#define GRAPE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GrapeStatus {
  GRAPE_STATUS_OK = 0,
  GRAPE_STATUS_NULL_POINTER = 1,
  GRAPE_STATUS_INVALID_ARGUMENT = 2,
  GRAPE_STATUS_CAPACITY = 3,
  GRAPE_STATUS_NUMERICAL = 4,
  GRAPE_STATUS_INVALID_METHOD = 5,
  GRAPE_STATUS_PANIC = 6,
} GrapeStatus;

typedef enum GrapeStateKind {
  GRAPE_STATE_KIND_SUM_SZ = 0,
  GRAPE_STATE_KIND_MINUS_SUM_SZ = 1,
  /**
   * `Sz` of the spin given by the accompanying index (0-based).
   */
  GRAPE_STATE_KIND_SZ = 2,
  /**
   * `Sx` of the spin given by the accompanying index (0-based).
   */
  GRAPE_STATE_KIND_SX = 3,
} GrapeStateKind;

typedef enum GrapeGradientMethod {
  GRAPE_GRADIENT_METHOD_FIRST_ORDER = 0,
  GRAPE_GRADIENT_METHOD_SERIES_EXACT = 1,
  GRAPE_GRADIENT_METHOD_EIGEN_EXACT = 2,
  GRAPE_GRADIENT_METHOD_FD_FORWARD = 3,
  GRAPE_GRADIENT_METHOD_FD_CENTRAL = 4,
} GrapeGradientMethod;

typedef enum GrapeAlgorithm {
  GRAPE_ALGORITHM_STEEPEST = 0,
  GRAPE_ALGORITHM_DFP = 1,
  GRAPE_ALGORITHM_BFGS = 2,
  GRAPE_ALGORITHM_LBFGS = 3,
} GrapeAlgorithm;

typedef enum GrapeRunStatus {
  GRAPE_RUN_STATUS_CONVERGED = 0,
  GRAPE_RUN_STATUS_TARGET_REACHED = 1,
  GRAPE_RUN_STATUS_BUDGET_EXHAUSTED = 2,
  GRAPE_RUN_STATUS_STALLED = 3,
} GrapeRunStatus;

/**
 * Opaque control problem.
 */
typedef struct GrapeProblem GrapeProblem;

/**
 * A linear chain of spin-1/2 nuclei with x and y controls.
 */
typedef struct GrapeSpinChainParams {
  size_t n_spins;
  /**
   * `n_spins` resonance offsets in Hz.
   */
  const double *offsets_hz;
  double j_hz;
  /**
   * Amplitude bound per control in Hz; zero or negative for none.
   */
  double b1_max_hz;
  double spectrometer_mhz;
  /**
   * Uniform relaxation rate in 1/s; zero for a closed system.
   */
  double relaxation_rate;
  size_t n_steps;
  /**
   * Step length in seconds.
   */
  double dt;
  enum GrapeStateKind initial;
  size_t initial_spin;
  enum GrapeStateKind target;
  size_t target_spin;
} GrapeSpinChainParams;

typedef struct GrapeOptimizerOptions {
  enum GrapeAlgorithm algorithm;
  enum GrapeGradientMethod gradient_method;
  size_t max_iters;
  double grad_tol;
  double fidelity_target;
  size_t lbfgs_memory;
} GrapeOptimizerOptions;

typedef struct GrapeOptimizeResult {
  double fidelity;
  size_t iterations;
  size_t evaluations;
  size_t curvature_rejections;
  enum GrapeRunStatus status;
} GrapeOptimizeResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *grape_version(void);

/**
 * Description of the last failure on this thread, or NULL after a
 * successful call. Valid until the next call into the library.
 */
const char *grape_last_error_message(void);

/**
 * Builds a spin-chain problem. On success `*out` owns a handle that must be
 * released with [`grape_problem_free`].
 *
 * # Safety
 * `params` must point to a valid struct whose `offsets_hz` holds `n_spins`
 * values; `out` must be writable.
 */
enum GrapeStatus grape_problem_new_spin_chain(const struct GrapeSpinChainParams *params,
                                              struct GrapeProblem **out);

/**
 * Releases a problem handle. NULL is ignored.
 *
 * # Safety
 * `problem` must come from [`grape_problem_new_spin_chain`] and not have
 * been freed already.
 */
void grape_problem_free(struct GrapeProblem *problem);

/**
 * Number of time steps, or 0 for NULL.
 *
 * # Safety
 * `problem` must be NULL or a live handle.
 */
size_t grape_problem_n_steps(const struct GrapeProblem *problem);

/**
 * Number of controls per step, or 0 for NULL.
 *
 * # Safety
 * `problem` must be NULL or a live handle.
 */
size_t grape_problem_n_controls(const struct GrapeProblem *problem);

/**
 * Transfer fidelity of a row-major pulse of `len = n_steps × n_controls`
 * amplitudes in Hz.
 *
 * # Safety
 * Pointers must be valid for the stated lengths.
 */
enum GrapeStatus grape_fidelity(const struct GrapeProblem *problem,
                                const double *pulse,
                                size_t len,
                                double *fidelity_out);

/**
 * Fidelity gradient per Hz, written row-major into `grad_out` (`len`
 * values). `fidelity_out` may be NULL.
 *
 * # Safety
 * Pointers must be valid for the stated lengths.
 */
enum GrapeStatus grape_gradient(const struct GrapeProblem *problem,
                                enum GrapeGradientMethod method,
                                const double *pulse,
                                size_t len,
                                double *grad_out,
                                double *fidelity_out);

/**
 * Default optimizer settings. Writes nothing when `out` is NULL.
 *
 * # Safety
 * `out` must be NULL or writable.
 */
void grape_optimizer_options_default(struct GrapeOptimizerOptions *out);

/**
 * Optimizes in place: `pulse` holds the starting amplitudes on entry and
 * the optimized ones on return.
 *
 * # Safety
 * Pointers must be valid for the stated lengths.
 */
enum GrapeStatus grape_optimize(const struct GrapeProblem *problem,
                                const struct GrapeOptimizerOptions *options,
                                double *pulse,
                                size_t len,
                                struct GrapeOptimizeResult *result_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GRAPE_H */
