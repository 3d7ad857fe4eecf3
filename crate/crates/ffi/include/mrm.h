#ifndef MRM_H
#define MRM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes. `MRM_OK` is zero; everything else is a failure.
typedef enum MrmStatus {
  MRM_OK = 0,
  MRM_NULL_POINTER = 1,
  MRM_VALIDATION = 2,
  MRM_RANGE = 3,
  MRM_UNSUPPORTED = 4,
  MRM_CONFIG = 5,
  MRM_SINGULAR = 6,
  MRM_NUMERICAL = 7,
  MRM_CANNOT_NORMALIZE = 8,
  MRM_IO = 9,
  MRM_BUFFER_TOO_SMALL = 10,
  MRM_PANIC = 11,
} MrmStatus;

// A sampled log-field on a uniform 1D grid.
typedef struct MrmField MrmField;

// Cell masses of a random measure on a uniform 1D grid.
typedef struct MrmMeasure MrmMeasure;

// A Lévy triple `(m, σ², ν)`.
typedef struct MrmTriple MrmTriple;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread; empty after a success. The
// pointer stays valid until the next `mrm_*` call on the same thread.
const char *mrm_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *mrm_version(void);

// Normalized log-normal triple `(−σ²/2, σ², 0)`.
//
// # Safety
// `out` must be a valid pointer.
enum MrmStatus mrm_triple_lognormal(double sigma2, struct MrmTriple **out);

// The degenerate triple whose measure is Lebesgue.
//
// # Safety
// `out` must be a valid pointer.
enum MrmStatus mrm_triple_lebesgue(struct MrmTriple **out);

// Normalized triple with Gaussian part `sigma2` and `n` jump atoms.
//
// # Safety
// `xs` and `ws` must point to `n` values; `out` must be a valid pointer.
enum MrmStatus mrm_triple_atomic(double sigma2,
                                 const double *xs,
                                 const double *ws,
                                 size_t n,
                                 struct MrmTriple **out);

// # Safety
// `t` must come from an `mrm_triple_*` constructor and not be used after.
void mrm_triple_free(struct MrmTriple *t);

// Drift `m` of the triple.
//
// # Safety
// `t` and `out` must be valid pointers.
enum MrmStatus mrm_triple_drift(const struct MrmTriple *t, double *out);

// `ψ(q)`; `+∞` beyond the critical moment.
//
// # Safety
// `t` and `out` must be valid pointers.
enum MrmStatus mrm_triple_psi(const struct MrmTriple *t, double q, double *out);

// `ζ(q) = q − ψ(q)`.
//
// # Safety
// `t` and `out` must be valid pointers.
enum MrmStatus mrm_triple_zeta(const struct MrmTriple *t, double q, double *out);

// Supremum of the `q` with `ψ(q) < ∞`.
//
// # Safety
// `t` and `out` must be valid pointers.
enum MrmStatus mrm_triple_critical_moment(const struct MrmTriple *t, double *out);

// Root `δ` of `ζ(δ) = delta0`.
//
// # Safety
// `t` and `out` must be valid pointers.
enum MrmStatus mrm_kpz_predict_1d(const struct MrmTriple *t, double delta0, double *out);

// θ-mass of a cone with resolution `l` and integral scale `big_t`.
//
// # Safety
// `out` must be a valid pointer.
enum MrmStatus mrm_cone_mass(double l, double big_t, double *out);

// θ-mass of the intersection of two cones whose apexes are `tau` apart.
//
// # Safety
// `out` must be a valid pointer.
enum MrmStatus mrm_cone_overlap(double l, double big_t, double tau, double *out);

// 2D log-normal structure function.
double mrm_zeta2d(double gamma2, double q);

// Green function of the disk `B(0, radius)` with Dirichlet boundary.
//
// # Safety
// `out` must be a valid pointer.
enum MrmStatus mrm_green_disk(double x0,
                              double x1,
                              double y0,
                              double y1,
                              double radius,
                              double *out);

// Samples `ω_l` at the midpoints of `n` cells on `[0, length]`.
//
// # Safety
// `t` and `out` must be valid pointers.
enum MrmStatus mrm_field_sample(const struct MrmTriple *t,
                                double length,
                                size_t n,
                                double l,
                                double big_t,
                                uint64_t seed,
                                struct MrmField **out);

// # Safety
// `f` must come from [`mrm_field_sample`] and not be used after.
void mrm_field_free(struct MrmField *f);

// Number of grid points; 0 for a null handle.
//
// # Safety
// `f` must be null or a valid handle.
size_t mrm_field_len(const struct MrmField *f);

// Copies the field values into `buf`, which must hold `mrm_field_len`
// values.
//
// # Safety
// `f` must be valid; `buf` must point to `len` writable values.
enum MrmStatus mrm_field_values(const struct MrmField *f, double *buf, size_t len);

// Cell masses `M_l(cell)` of the field.
//
// # Safety
// `f` and `out` must be valid pointers.
enum MrmStatus mrm_measure_from_field(const struct MrmField *f, struct MrmMeasure **out);

// # Safety
// `m` must come from [`mrm_measure_from_field`] and not be used after.
void mrm_measure_free(struct MrmMeasure *m);

// Number of cells; 0 for a null handle.
//
// # Safety
// `m` must be null or a valid handle.
size_t mrm_measure_len(const struct MrmMeasure *m);

// Copies the cell masses into `buf`.
//
// # Safety
// `m` must be valid; `buf` must point to `len` writable values.
enum MrmStatus mrm_measure_masses(const struct MrmMeasure *m, double *buf, size_t len);

// # Safety
// `m` and `out` must be valid pointers.
enum MrmStatus mrm_measure_total_mass(const struct MrmMeasure *m, double *out);

// Random distance `ρ(x, y) = M([x, y])`.
//
// # Safety
// `m` and `out` must be valid pointers.
enum MrmStatus mrm_measure_rho(const struct MrmMeasure *m, double x, double y, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MRM_H */
