#ifndef RLS_PRUNE_H
#define RLS_PRUNE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RlsStatus {
  RLS_STATUS_OK = 0,
  RLS_STATUS_NULL_POINTER = 1,
  RLS_STATUS_INVALID_ARGUMENT = 2,
  RLS_STATUS_CONFIG = 3,
  RLS_STATUS_FORMAT = 4,
  RLS_STATUS_SINGULARITY = 5,
  RLS_STATUS_IO = 6,
  RLS_STATUS_DIMENSION = 7,
  RLS_STATUS_STATE = 8,
  RLS_STATUS_PANIC = 9,
} RlsStatus;

/**
 * Opaque training run: configuration, network, optimizer state, metrics.
 */
typedef struct RlsTrainer RlsTrainer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. Valid until the
 * next failing call on the same thread.
 */
const char *rls_last_error_message(void);

/**
 * Creates a fresh run from `key=value` configuration text (may be empty
 * for all defaults).
 *
 * # Safety
 * `config_text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum RlsStatus rls_trainer_new(const char *config_text, struct RlsTrainer **out);

/**
 * Restores a run from a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum RlsStatus rls_trainer_load(const char *path, struct RlsTrainer **out);

/**
 * # Safety
 * `trainer` must come from this library; `path` must be NUL-terminated.
 */
enum RlsStatus rls_trainer_save(const struct RlsTrainer *trainer, const char *path);

/**
 * Trains up to `epochs` more epochs (never past the configured total),
 * loading the configured dataset on first use.
 *
 * # Safety
 * `trainer` must come from this library.
 */
enum RlsStatus rls_trainer_train(struct RlsTrainer *trainer, uint32_t epochs);

/**
 * Network outputs for `n_samples` inputs of `sample_len` values each, in
 * the original (unmasked) feature space. `out` receives
 * `n_samples × num_classes` values.
 *
 * # Safety
 * `inputs` must hold `n_samples * sample_len` doubles and `out` `out_len` doubles.
 */
enum RlsStatus rls_trainer_predict(const struct RlsTrainer *trainer,
                                   const double *inputs,
                                   size_t n_samples,
                                   size_t sample_len,
                                   double *out,
                                   size_t out_len);

/**
 * Completed epochs, total weight count, and the retained node / weight
 * percentages of the latest epoch (100 before the first epoch).
 *
 * # Safety
 * `trainer` must come from this library; every out pointer may be NULL.
 */
enum RlsStatus rls_trainer_progress(const struct RlsTrainer *trainer,
                                    size_t *epochs_done,
                                    size_t *weight_count,
                                    double *retained_nodes_pct,
                                    double *retained_weights_pct);

/**
 * Writes the metrics CSV and its summary / prune-event companions.
 *
 * # Safety
 * `trainer` must come from this library; `path` must be NUL-terminated.
 */
enum RlsStatus rls_trainer_write_metrics(const struct RlsTrainer *trainer, const char *path);

/**
 * # Safety
 * `trainer` must come from this library and not be used afterwards. NULL is ignored.
 */
void rls_trainer_free(struct RlsTrainer *trainer);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RLS_PRUNE_H */
