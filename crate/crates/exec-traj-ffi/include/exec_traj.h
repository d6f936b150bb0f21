#ifndef EXEC_TRAJ_H
#define EXEC_TRAJ_H

/* Generated by cbindgen from exec-traj-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Permanent impact family selector.
 */
typedef enum {
  ET_PERMANENT_ZERO = 0,
  ET_PERMANENT_LINEAR = 1,
} EtPermanent;

/**
 * Status codes returned by every fallible call.
 */
typedef enum {
  ET_OK = 0,
  ET_NULL_POINTER = 1,
  ET_INVALID_ARGUMENT = 2,
  ET_NUMERIC_FAILURE = 3,
  ET_NON_CONVERGENCE = 4,
  ET_BUFFER_TOO_SMALL = 5,
  ET_INTERNAL_ERROR = 6,
} EtStatus;

/**
 * Temporary impact family selector.
 */
typedef enum {
  ET_TEMPORARY_ZERO = 0,
  ET_TEMPORARY_LINEAR = 1,
  ET_TEMPORARY_POWER = 2,
} EtTemporary;

/**
 * Opaque problem handle: market, impact and order parameters.
 */
typedef struct EtProblem EtProblem;

/**
 * Opaque trajectory handle.
 */
typedef struct EtTrajectory EtTrajectory;

/**
 * Solve diagnostics mirrored into C.
 */
typedef struct {
  bool converged;
  uint64_t iterations;
  /**
   * Objective at the problem's risk aversion; NaN when unavailable.
   */
  double objective;
  /**
   * Sup norm of the reduced Euler-Lagrange residual of the base solve.
   */
  double residual_sup;
  double boundary_error;
  double initial_slope;
  /**
   * Final gradient norm of the risk-aversion correction; NaN for
   * `lambda = 0` solves.
   */
  double gradient_norm;
} EtSolveReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the last error message for this thread into `buf` (NUL-terminated,
 * truncated to `cap` bytes). Returns the full message length in bytes,
 * excluding the terminator.
 *
 * # Safety
 * `buf` must point to at least `cap` writable bytes, or be NULL (in which
 * case only the length is returned).
 */
size_t et_last_error(char *buf, size_t cap);

/**
 * Create a problem handle.
 *
 * `alpha` is read only for the linear permanent family; `eta` and `p` only
 * for linear/power temporary families (`p` for power alone).
 *
 * # Safety
 * `out` must be a valid pointer to an `EtProblem*` slot.
 */
EtStatus et_problem_new(double s,
                        double sigma,
                        EtPermanent permanent,
                        double alpha,
                        EtTemporary temporary,
                        double eta,
                        double p,
                        double shares,
                        double horizon,
                        double lambda,
                        EtProblem **out);

/**
 * Replace the temporary impact with a tabulated monotone-cubic family.
 *
 * # Safety
 * `problem` must be a live handle from [`et_problem_new`]; `xs` and `ys`
 * must point to `len` readable doubles each.
 */
EtStatus et_problem_set_tabulated_impact(EtProblem *problem,
                                         const double *xs,
                                         const double *ys,
                                         size_t len);

/**
 * Destroy a problem handle. NULL is ignored.
 *
 * # Safety
 * `problem` must be NULL or a live handle from [`et_problem_new`], not yet
 * freed.
 */
void et_problem_free(EtProblem *problem);

/**
 * Solve the optimal schedule: the risk-neutral base solve, plus the sine
 * basis risk correction when the problem's `lambda > 0`.
 *
 * `ode_steps = 0` and `basis_size = 0` select the defaults (4000 / 8).
 *
 * # Safety
 * `problem` must be a live handle; `out_traj` must be a valid slot;
 * `out_report` may be NULL.
 */
EtStatus et_solve(const EtProblem *problem,
                  size_t ode_steps,
                  size_t basis_size,
                  EtTrajectory **out_traj,
                  EtSolveReport *out_report);

/**
 * Build the uniform-rate schedule on `n_steps` equal steps
 * (`n_steps = 0` selects 1000).
 *
 * # Safety
 * `problem` must be a live handle; `out_traj` must be a valid slot.
 */
EtStatus et_trajectory_uniform(const EtProblem *problem, size_t n_steps, EtTrajectory **out_traj);

/**
 * Number of grid nodes in a trajectory; 0 for NULL.
 *
 * # Safety
 * `traj` must be NULL or a live handle.
 */
size_t et_trajectory_len(const EtTrajectory *traj);

/**
 * Copy trajectory columns into caller buffers of capacity `cap` nodes.
 * Any of the three destination pointers may be NULL to skip that column.
 *
 * # Safety
 * Non-NULL destinations must point to at least `cap` writable doubles.
 */
EtStatus et_trajectory_copy(const EtTrajectory *traj,
                            double *times,
                            double *values,
                            double *rates,
                            size_t cap);

/**
 * Destroy a trajectory handle. NULL is ignored.
 *
 * # Safety
 * `traj` must be NULL or a live handle, not yet freed.
 */
void et_trajectory_free(EtTrajectory *traj);

/**
 * Mean-variance objective decomposition of a schedule under the problem's
 * parameters: `J`, expected shortfall and the `lambda`-weighted variance.
 *
 * # Safety
 * `problem` and `traj` must be live handles; output pointers may be NULL.
 */
EtStatus et_objective(const EtProblem *problem,
                      const EtTrajectory *traj,
                      double *out_objective,
                      double *out_shortfall,
                      double *out_variance_term);

/**
 * First two moments (and variance) of the spend at time `t`.
 *
 * # Safety
 * `problem` and `traj` must be live handles; output pointers may be NULL.
 */
EtStatus et_moments(const EtProblem *problem,
                    const EtTrajectory *traj,
                    double t,
                    double *out_mean,
                    double *out_second,
                    double *out_variance);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* EXEC_TRAJ_H */
