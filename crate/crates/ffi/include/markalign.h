#ifndef MARKALIGN_H
#define MARKALIGN_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum MkStatus {
  MK_STATUS_OK = 0,
  MK_STATUS_NULL_POINTER = 1,
  MK_STATUS_INVALID_MODEL = 2,
  MK_STATUS_PARSE = 3,
  MK_STATUS_CONVERGENCE_FAILURE = 4,
  MK_STATUS_DRIFT_NOT_NEGATIVE = 5,
  MK_STATUS_NO_POSITIVE_CYCLE = 6,
  MK_STATUS_NOT_IID = 7,
  MK_STATUS_UNBOUNDED = 8,
  MK_STATUS_INSUFFICIENT_REPLICATES = 9,
  MK_STATUS_SEED_REQUIRED = 10,
  MK_STATUS_CONDITION_NOT_VERIFIED = 11,
  MK_STATUS_SYMBOL_OUT_OF_ALPHABET = 12,
  MK_STATUS_INVALID_ARGUMENT = 13,
  MK_STATUS_IO = 14,
  MK_STATUS_INVALID_UTF8 = 15,
  MK_STATUS_PANIC = 16,
} MkStatus;

/**
 * A validated scoring model.
 */
typedef struct MkModel MkModel;

/**
 * The tilted chain at `θ*` of a model.
 */
typedef struct MkTilted MkTilted;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *mk_version(void);

/**
 * Message of the last failed call on this thread, or NULL.
 *
 * The pointer stays valid until the next `mk_*` call on the same thread.
 */
const char *mk_last_error(void);

/**
 * Load a model from a TOML file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum MkStatus mk_model_load(const char *path, struct MkModel **out);

/**
 * Parse a model from TOML text.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a writable pointer.
 */
enum MkStatus mk_model_parse(const char *text, struct MkModel **out);

/**
 * Build a pair-score model from row-major `n × n` matrices `p`, `q` and `score`.
 *
 * # Safety
 * Each matrix pointer must reference `n * n` readable doubles and `out`
 * must be writable.
 */
enum MkStatus mk_model_pair(size_t n,
                            const double *p,
                            const double *q,
                            const double *score,
                            struct MkModel **out);

/**
 * Release a model. NULL is ignored.
 *
 * # Safety
 * `model` must come from a `mk_model_*` constructor and not be freed twice.
 */
void mk_model_free(struct MkModel *model);

/**
 * Alphabet size, or 0 for NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t mk_model_n_states(const struct MkModel *model);

/**
 * Whether the model's scores live on an integer lattice after rescaling.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
bool mk_model_lattice(const struct MkModel *model);

/**
 * Perron root `φ(θ)` of the tilted matrix.
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum MkStatus mk_phi(const struct MkModel *model, double theta, double *out);

/**
 * Solve `φ(θ*) = 1` and return the tilted chain.
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum MkStatus mk_tilted_solve(const struct MkModel *model, struct MkTilted **out);

/**
 * Release a tilted chain. NULL is ignored.
 *
 * # Safety
 * `tilted` must come from [`mk_tilted_solve`] and not be freed twice.
 */
void mk_tilted_free(struct MkTilted *tilted);

/**
 * `θ*`, or NaN for NULL.
 *
 * # Safety
 * `tilted` must be NULL or a live handle.
 */
double mk_tilted_theta_star(const struct MkTilted *tilted);

/**
 * Mean score under the tilted chain, or NaN for NULL.
 *
 * # Safety
 * `tilted` must be NULL or a live handle.
 */
double mk_tilted_mu_star(const struct MkTilted *tilted);

/**
 * Estimate `K*` and its standard error by ladder simulation.
 *
 * # Safety
 * `model` and `tilted` must be live handles for the same model; the output
 * pointers must be writable.
 */
enum MkStatus mk_k_star(const struct MkModel *model,
                        const struct MkTilted *tilted,
                        uint64_t seed,
                        size_t cycles,
                        size_t tail_samples,
                        double *out_k,
                        double *out_stderr);

/**
 * Best local score `Mₙ` and the count `Cₙ(t)` of excursion peaks above `t`.
 *
 * Sequences are given as state indices `0..n_states`.
 *
 * # Safety
 * `x` and `y` must reference `n_x` and `n_y` readable bytes; the output
 * pointers must be writable.
 */
enum MkStatus mk_align(const struct MkModel *model,
                       const uint8_t *x,
                       size_t n_x,
                       const uint8_t *y,
                       size_t n_y,
                       double t,
                       double *out_max,
                       size_t *out_count);

/**
 * Normalized score `s'` and Gumbel tail `ℙ(Mₙ > s)`.
 *
 * # Safety
 * The output pointers must be writable.
 */
enum MkStatus mk_normalize_score(double theta_star,
                                 double k_star,
                                 bool lattice,
                                 double s,
                                 size_t n_x,
                                 size_t n_y,
                                 double *out_s_prime,
                                 double *out_p);

/**
 * Approximate p-value `ℙ(Mₙ ≥ s)` of an observed best score.
 *
 * # Safety
 * `out_p` must be writable.
 */
enum MkStatus mk_p_value(double theta_star,
                         double k_star,
                         bool lattice,
                         double s,
                         size_t n_x,
                         size_t n_y,
                         double *out_p);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MARKALIGN_H */
