#ifndef STRAINSIS_H
#define STRAINSIS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SisStatus {
  SIS_STATUS_OK = 0,
  SIS_STATUS_NULL_POINTER = 1,
  SIS_STATUS_INPUT = 2,
  SIS_STATUS_VALIDATION = 3,
  SIS_STATUS_PRECONDITION = 4,
  SIS_STATUS_CONVERGENCE = 5,
  SIS_STATUS_NO_SIGN_CHANGE = 6,
  SIS_STATUS_POSITIVITY = 7,
  SIS_STATUS_CONFIG = 8,
  SIS_STATUS_IO = 9,
  SIS_STATUS_INTERNAL = 10,
  SIS_STATUS_PANIC = 11,
} SisStatus;

typedef enum SisScheme {
  SIS_SCHEME_IMEX_EULER = 0,
  SIS_SCHEME_IMEX_CN = 1,
} SisScheme;

/**
 * Opaque model handle: grid, sampled coefficients and initial state.
 */
typedef struct SisModel SisModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Builds a model from scenario TOML text.
 *
 * # Safety
 * `toml` must be a NUL-terminated string; `out` must be writable.
 */
enum SisStatus sis_model_from_toml(const char *toml, struct SisModel **out);

/**
 * Builds a model from cell samples on an `n_cells` grid; bounds are taken
 * from the samples.
 *
 * # Safety
 * `d`, `rho`, `gamma`, `v0` must hold `n_cells` doubles, `beta` must hold
 * `n_cells * n_cells`; `out` must be writable.
 */
enum SisStatus sis_model_from_arrays(size_t n_cells,
                                     const double *d,
                                     const double *rho,
                                     const double *beta,
                                     const double *gamma,
                                     const double *v0,
                                     double s0,
                                     struct SisModel **out);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from a constructor above and not be used afterwards.
 */
void sis_model_free(struct SisModel *model);

/**
 * # Safety
 * `m` must be a live model; `out` must be writable.
 */
enum SisStatus sis_model_n_cells(const struct SisModel *m, size_t *out);

/**
 * Spectral bound of Ψ_R and, if `eigvec_out` is non-null, its Perron vector
 * (unit discrete W^{1,1} norm).
 *
 * # Safety
 * `m` must be a live model; `s_out` writable; `eigvec_out` null or `n_cells` long.
 */
enum SisStatus sis_spectral_bound_psi_r(const struct SisModel *m,
                                        double r,
                                        double *s_out,
                                        double *eigvec_out);

/**
 * Susceptible threshold S* of a bilinear (γ ≡ 0) model.
 *
 * # Safety
 * `m` must be a live model; `out` writable.
 */
enum SisStatus sis_find_s_star(const struct SisModel *m, double *out);

/**
 * Bilinear endemic state with total infected mass `v_total`.
 *
 * # Safety
 * `m` live; `v_out` holds `n_cells` doubles; `s_out` writable.
 */
enum SisStatus sis_endemic_bilinear(const struct SisModel *m,
                                    double v_total,
                                    double *v_out,
                                    double *s_out);

/**
 * Endemic state on the ray S* = R from the fixed-point solver.
 *
 * # Safety
 * `m` live; `v_out` holds `n_cells` doubles; `s_out` writable.
 */
enum SisStatus sis_endemic_fixed_point(const struct SisModel *m,
                                       double r,
                                       double *v_out,
                                       double *s_out);

/**
 * Integrates from the model's initial state to `t_end` and returns the
 * final state. `max_mass_error_out` may be null.
 *
 * # Safety
 * `m` live; `v_out` holds `n_cells` doubles; `s_out` writable.
 */
enum SisStatus sis_simulate(const struct SisModel *m,
                            double dt,
                            double t_end,
                            enum SisScheme scheme,
                            double *v_out,
                            double *s_out,
                            double *max_mass_error_out);

/**
 * Message for the last failed call on this thread, or null.
 */
const char *sis_last_error_message(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STRAINSIS_H */
