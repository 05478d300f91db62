/* C interface to the telosim simulation library. */

#ifndef TELOSIM_H
#define TELOSIM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * The call succeeded.
 */
#define TELOSIM_OK 0

/**
 * A required pointer argument was null.
 */
#define TELOSIM_NULL_POINTER -1

/**
 * An argument was rejected; see `telosim_last_error`.
 */
#define TELOSIM_INVALID_ARGUMENT -2

/**
 * The computation started but could not finish; see `telosim_last_error`.
 */
#define TELOSIM_RUN_FAILED -3

/**
 * The library panicked; state may be inconsistent.
 */
#define TELOSIM_PANIC -4

/**
 * A validated model. Opaque; create with `telosim_model1_new` or
 * `telosim_model2_new`, release with `telosim_model_free`.
 */
typedef struct TelosimModel TelosimModel;

/**
 * One finished population simulation. Opaque; release with
 * `telosim_result_free`.
 */
typedef struct TelosimResult TelosimResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread. The pointer stays
 * valid until the next failing call on the same thread. Never null.
 */
const char *telosim_last_error(void);

/**
 * Build the bounded-lengthening preset: shortening uniform on
 * `[0, delta]`, lengthening on every coordinate with width
 * `delta_cap / (x + 1)`, lengthening probability `gamma`.
 *
 * `birth_coeffs` selects the division rate: pass null with
 * `n_coeffs = 0` for the age-proportional rate, one value for a constant
 * rate, or polynomial coefficients in increasing degree.
 *
 * # Safety
 *
 * `birth_coeffs` must point to `n_coeffs` readable doubles unless
 * `n_coeffs` is zero; `out` must be a valid destination pointer.
 */
int32_t telosim_model1_new(size_t k,
                           double delta,
                           double delta_cap,
                           double gamma,
                           const double *birth_coeffs,
                           size_t n_coeffs,
                           struct TelosimModel **out);

/**
 * Build the per-coordinate lengthening preset: shortening uniform on
 * `[0, delta]`, lengthening uniform on `[0, big_delta]`, coordinate
 * lengthening probability `q0 (1 + x / x_scale)^{-p}`. Parameter
 * combinations whose senescence mass is too heavy are rejected.
 *
 * # Safety
 *
 * Same pointer contract as `telosim_model1_new`.
 */
int32_t telosim_model2_new(size_t k,
                           double delta,
                           double big_delta,
                           double q0,
                           double x_scale,
                           double p,
                           const double *birth_coeffs,
                           size_t n_coeffs,
                           struct TelosimModel **out);

/**
 * Release a model handle. Null is ignored.
 *
 * # Safety
 *
 * `model` must be a pointer returned by a constructor and not yet freed.
 */
void telosim_model_free(struct TelosimModel *model);

/**
 * Number of telomere coordinates (`2k`), or 0 for a null handle.
 *
 * # Safety
 *
 * `model` must be a live handle or null.
 */
size_t telosim_model_dim(const struct TelosimModel *model);

/**
 * Simulate one population tree from a cell with the given coordinates
 * and age, up to `horizon`, stopping early if the population exceeds
 * `cap`. The same seed reproduces the same tree.
 *
 * # Safety
 *
 * `init` must point to `telosim_model_dim(model)` readable doubles and
 * `out` must be a valid destination pointer.
 */
int32_t telosim_simulate(const struct TelosimModel *model,
                         const double *init,
                         double init_age,
                         double horizon,
                         size_t cap,
                         uint64_t seed,
                         struct TelosimResult **out);

/**
 * Release a simulation result. Null is ignored.
 *
 * # Safety
 *
 * `result` must be a pointer returned by `telosim_simulate` and not yet
 * freed.
 */
void telosim_result_free(struct TelosimResult *result);

/**
 * Number of cells alive at the horizon, or 0 for a null handle.
 *
 * # Safety
 *
 * `result` must be a live handle or null.
 */
size_t telosim_result_alive_count(const struct TelosimResult *result);

/**
 * Number of senescent cells produced, or 0 for a null handle.
 *
 * # Safety
 *
 * `result` must be a live handle or null.
 */
size_t telosim_result_senescent_count(const struct TelosimResult *result);

/**
 * Number of divisions in the tree, or 0 for a null handle.
 *
 * # Safety
 *
 * `result` must be a live handle or null.
 */
size_t telosim_result_division_count(const struct TelosimResult *result);

/**
 * Whether the run stopped early at the cell cap.
 *
 * # Safety
 *
 * `result` must be a live handle or null.
 */
bool telosim_result_capped(const struct TelosimResult *result);

/**
 * Copy the coordinates and birth time of one alive cell, indexed from 0
 * in deterministic simulation order.
 *
 * # Safety
 *
 * `out_x` must point to `telosim_model_dim` writable doubles and
 * `out_birth_time` to one writable double.
 */
int32_t telosim_result_alive_cell(const struct TelosimResult *result,
                                  size_t index,
                                  double *out_x,
                                  double *out_birth_time);

/**
 * Estimate the exponential growth rate from `replicates` trees started
 * at the same length `init_x` on every coordinate: counts are averaged
 * on a grid over `[t_burn, horizon]` and fitted on a log scale. Writes
 * the rate and its standard error.
 *
 * # Safety
 *
 * `out_rate` and `out_se` must each point to one writable double.
 */
int32_t telosim_growth_estimate(const struct TelosimModel *model,
                                double init_x,
                                double init_age,
                                double t_burn,
                                double horizon,
                                size_t replicates,
                                size_t cap,
                                uint64_t seed,
                                double *out_rate,
                                double *out_se);

/**
 * Run the renewal expansion certificate on the model's default point
 * grid with `paths_per_point` Monte Carlo lines per point, and write
 * whether every point cleared the threshold by three standard errors.
 *
 * # Safety
 *
 * `out_passed` must point to one writable bool.
 */
int32_t telosim_check_renewal_expansion(const struct TelosimModel *model,
                                        size_t paths_per_point,
                                        uint64_t seed,
                                        bool *out_passed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TELOSIM_H */
