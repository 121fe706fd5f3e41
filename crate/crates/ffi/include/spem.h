#ifndef SPEM_H
#define SPEM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum SpemStatus {
  SPEM_STATUS_OK = 0,
  SPEM_STATUS_NULL_POINTER = 1,
  SPEM_STATUS_INVALID_ARGUMENT = 2,
  SPEM_STATUS_IO = 3,
  SPEM_STATUS_FORMAT = 4,
  SPEM_STATUS_NUMERIC = 5,
  SPEM_STATUS_PANIC = 6,
} SpemStatus;

/**
 * A memory bank together with the embedder it was built with.
 */
typedef struct SpemBank SpemBank;

/**
 * A trained coupling flow.
 */
typedef struct SpemFlow SpemFlow;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null if none.
 * Valid until the next failing call on the same thread.
 */
const char *spem_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *spem_version(void);

/**
 * Loads a flow saved by `spem train`. On success `*out` owns a new handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SpemStatus spem_flow_load(const char *path, struct SpemFlow **out);

/**
 * Releases a flow handle. Null is ignored.
 *
 * # Safety
 * `flow` must come from [`spem_flow_load`] and not be used afterwards.
 */
void spem_flow_free(struct SpemFlow *flow);

/**
 * Input width of the flow, or 0 for a null handle.
 *
 * # Safety
 * `flow` must be null or a live handle.
 */
size_t spem_flow_dim(const struct SpemFlow *flow);

/**
 * `log p(x)` for one point of width `d`.
 *
 * # Safety
 * `x` must point to `d` doubles; `flow` and `out` must be valid.
 */
enum SpemStatus spem_flow_log_likelihood(const struct SpemFlow *flow,
                                         const double *x,
                                         size_t d,
                                         double *out);

/**
 * Maps `x` to the latent `z` (written to `z_out`, width `d`) and the
 * log-determinant of the Jacobian.
 *
 * # Safety
 * `x` and `z_out` must point to `d` doubles; the handle and `log_det`
 * must be valid.
 */
enum SpemStatus spem_flow_forward(const struct SpemFlow *flow,
                                  const double *x,
                                  size_t d,
                                  double *z_out,
                                  double *log_det);

/**
 * Loads a memory bank and its embedder, checking they belong together.
 *
 * # Safety
 * Both paths must be NUL-terminated strings and `out` a valid pointer.
 */
enum SpemStatus spem_bank_load(const char *bank_path,
                               const char *embedder_path,
                               struct SpemBank **out);

/**
 * Releases a bank handle. Null is ignored.
 *
 * # Safety
 * `bank` must come from [`spem_bank_load`] and not be used afterwards.
 */
void spem_bank_free(struct SpemBank *bank);

/**
 * Largest cosine similarity between the rectified embedding of `x` and
 * the bank.
 *
 * # Safety
 * `x` must point to `d` doubles; the handle and `out` must be valid.
 */
enum SpemStatus spem_bank_lambda(const struct SpemBank *bank,
                                 const double *x,
                                 size_t d,
                                 double *out);

/**
 * SPEM score of one point. `sample_id` selects the noise stream, so the
 * same `(seed, sample_id)` always gives the same score. `lambda_out` and
 * `sigma_out` may be null.
 *
 * # Safety
 * `x` must point to `d` doubles; handles and `score_out` must be valid.
 */
enum SpemStatus spem_score(const struct SpemFlow *flow,
                           const struct SpemBank *bank,
                           const double *x,
                           size_t d,
                           double alpha,
                           double alpha_noise,
                           uint64_t seed,
                           uint64_t sample_id,
                           double *score_out,
                           double *lambda_out,
                           double *sigma_out);

/**
 * AUROC with OOD as the positive class (higher score means more anomalous).
 *
 * # Safety
 * `id_scores` and `ood_scores` must point to `n_id` and `n_ood` doubles.
 */
enum SpemStatus spem_auroc(const double *id_scores,
                           size_t n_id,
                           const double *ood_scores,
                           size_t n_ood,
                           double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPEM_H */
