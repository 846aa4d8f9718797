#ifndef LSIEP_H
#define LSIEP_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum LsiepError {
  LSIEP_ERROR_OK = 0,
  LSIEP_ERROR_NULL_POINTER = 1,
  LSIEP_ERROR_INVALID_ARGUMENT = 2,
  LSIEP_ERROR_DIMENSION_MISMATCH = 3,
  LSIEP_ERROR_NUMERIC = 4,
  LSIEP_ERROR_IO = 5,
  LSIEP_ERROR_BUFFER_TOO_SMALL = 6,
  LSIEP_ERROR_PANIC = 7,
} LsiepError;

/**
 * Outcome of a completed solve.
 */
typedef enum LsiepSolveStatus {
  LSIEP_SOLVE_STATUS_CONVERGED = 0,
  LSIEP_SOLVE_STATUS_MAX_OUTER = 1,
  LSIEP_SOLVE_STATUS_LINE_SEARCH_FAILURE = 2,
} LsiepSolveStatus;

/**
 * Opaque problem instance with its starting point.
 */
typedef struct LsiepInstance LsiepInstance;

/**
 * Opaque solver report.
 */
typedef struct LsiepReport LsiepReport;

/**
 * Solver settings. Obtain defaults from [`lsiep_solver_config_default`].
 */
typedef struct LsiepSolverConfig {
  double beta;
  double sigma;
  double eta_max;
  double grad_tol;
  size_t max_outer;
  bool use_preconditioner;
  double t_hat;
  /**
   * Inner CG cap; 0 selects `n^3`.
   */
  size_t cg_max_iters;
  /**
   * Inner CG relative tolerance; 0 selects the forcing term.
   */
  double cg_rel_tol;
} LsiepSolverConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer is
 * valid until the next `lsiep_*` call on the same thread.
 */
const char *lsiep_last_error_message(void);

struct LsiepSolverConfig lsiep_solver_config_default(void);

/**
 * The 5x5 tridiagonal test problem with its published start.
 */
enum LsiepError lsiep_instance_example1(struct LsiepInstance **out);

/**
 * Discretized inverse Sturm-Liouville problem of order `n` with `l` parameters.
 */
enum LsiepError lsiep_instance_sturm_liouville(size_t n, size_t l, struct LsiepInstance **out);

/**
 * Seeded random instance.
 */
enum LsiepError lsiep_instance_random(size_t n,
                                      size_t l,
                                      size_t m,
                                      uint64_t seed,
                                      struct LsiepInstance **out);

/**
 * Instance from raw data. `basis` holds `l + 1` row-major `n x n` symmetric
 * matrices `A_0, ..., A_l`; `targets` holds `m` nondecreasing eigenvalues.
 * The start is built from `A(c0)`; `c0` may be null for `c0 = 0`.
 *
 * # Safety
 *
 * Pointers must reference at least the stated number of doubles.
 */
enum LsiepError lsiep_instance_from_data(size_t n,
                                         size_t l,
                                         size_t m,
                                         const double *basis,
                                         const double *targets,
                                         const double *c0,
                                         struct LsiepInstance **out);

/**
 * Loads an instance JSON file as written by `lsiep generate`.
 *
 * # Safety
 *
 * `path` must be a NUL-terminated string.
 */
enum LsiepError lsiep_instance_from_json(const char *path, struct LsiepInstance **out);

/**
 * Writes the instance dimensions; any output pointer may be null.
 *
 * # Safety
 *
 * `inst` must be null or a live handle.
 */
enum LsiepError lsiep_instance_dims(const struct LsiepInstance *inst,
                                    size_t *n,
                                    size_t *l,
                                    size_t *m);

/**
 * # Safety
 *
 * `inst` must be null or a handle not yet freed.
 */
void lsiep_instance_free(struct LsiepInstance *inst);

/**
 * Runs the solver. `config` may be null for defaults. A run that stops
 * without converging still returns `Ok`; inspect
 * [`lsiep_report_status`].
 *
 * # Safety
 *
 * `inst` must be a live handle and `config` null or valid.
 */
enum LsiepError lsiep_solve(const struct LsiepInstance *inst,
                            const struct LsiepSolverConfig *config,
                            struct LsiepReport **out);

/**
 * # Safety
 *
 * `report` must be null or a handle not yet freed.
 */
void lsiep_report_free(struct LsiepReport *report);

/**
 * # Safety
 *
 * `r` must be a live handle; `status` writable.
 */
enum LsiepError lsiep_report_status(const struct LsiepReport *r, enum LsiepSolveStatus *status);

/**
 * Counters of the run; any output pointer may be null.
 *
 * # Safety
 *
 * `r` must be a live handle.
 */
enum LsiepError lsiep_report_counts(const struct LsiepReport *r,
                                    size_t *iterations,
                                    size_t *function_evals,
                                    size_t *total_cg_iters);

/**
 * Final `||H||_F` and `||grad h||`; any output pointer may be null.
 *
 * # Safety
 *
 * `r` must be a live handle.
 */
enum LsiepError lsiep_report_norms(const struct LsiepReport *r,
                                   double *residual_norm,
                                   double *grad_norm);

/**
 * Relative parameter error against the known truth. Fails with
 * `InvalidArgument` when the instance has no ground truth.
 *
 * # Safety
 *
 * `r` must be a live handle; `err_c` writable.
 */
enum LsiepError lsiep_report_err_c(const struct LsiepReport *r, double *err_c);

/**
 * Copies the final parameters `c` (length `l`) into `buf`.
 *
 * # Safety
 *
 * `r` must be a live handle; `buf` must hold `len` doubles.
 */
enum LsiepError lsiep_report_c(const struct LsiepReport *r, double *buf, size_t len);

/**
 * Copies the final free eigenvalues (length `n - m`) into `buf`.
 *
 * # Safety
 *
 * `r` must be a live handle; `buf` must hold `len` doubles.
 */
enum LsiepError lsiep_report_lambda(const struct LsiepReport *r, double *buf, size_t len);

/**
 * Copies the final `Q` (row-major, `n * n` values) into `buf`.
 *
 * # Safety
 *
 * `r` must be a live handle; `buf` must hold `len` doubles.
 */
enum LsiepError lsiep_report_q(const struct LsiepReport *r, double *buf, size_t len);

/**
 * The report as JSON, or null on failure. Release with [`lsiep_string_free`].
 *
 * # Safety
 *
 * `r` must be null or a live handle.
 */
char *lsiep_report_to_json(const struct LsiepReport *r);

/**
 * # Safety
 *
 * `s` must be null or a string returned by this library and not yet freed.
 */
void lsiep_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LSIEP_H */
