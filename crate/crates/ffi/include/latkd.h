#ifndef LATKD_H
#define LATKD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LatkdStatus {
  LATKD_STATUS_OK = 0,
  LATKD_STATUS_NULL_POINTER = 1,
  LATKD_STATUS_INVALID_ARGUMENT = 2,
  LATKD_STATUS_IO = 3,
  LATKD_STATUS_FORMAT = 4,
  LATKD_STATUS_DIMENSION_MISMATCH = 5,
  LATKD_STATUS_UNDEFINED_METRIC = 6,
  LATKD_STATUS_INTEGRITY = 7,
  LATKD_STATUS_PANIC = 8,
} LatkdStatus;

/**
 * Opaque handle to a loaded model.
 */
typedef struct LatkdModel LatkdModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Loads a model from a portable JSON file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer. On
 * success `*out` owns a handle that must be released with [`latkd_model_free`].
 */
enum LatkdStatus latkd_model_load_file(const char *path, struct LatkdModel **out);

/**
 * Loads a model from a run's blob store (`<run>/objects`) by content hash.
 *
 * # Safety
 * `store_root` and `hash` must be NUL-terminated strings and `out` a writable
 * pointer. On success `*out` must be released with [`latkd_model_free`].
 */
enum LatkdStatus latkd_model_load_blob(const char *store_root,
                                       const char *hash,
                                       struct LatkdModel **out);

/**
 * Number of features the model expects per row.
 *
 * # Safety
 * `model` must be a live handle and `out` a writable pointer.
 */
enum LatkdStatus latkd_model_input_dim(const struct LatkdModel *model, size_t *out);

/**
 * Positive-class probabilities for `n_rows` rows of `n_cols` features.
 *
 * # Safety
 * `features` must hold `n_rows * n_cols` doubles and `out_scores` room for
 * `n_rows` doubles.
 */
enum LatkdStatus latkd_model_score(const struct LatkdModel *model,
                                   const double *features,
                                   size_t n_rows,
                                   size_t n_cols,
                                   double *out_scores);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void latkd_model_free(struct LatkdModel *model);

/**
 * Area under the precision-recall curve (average precision) of `scores`
 * against 0/1 `labels`.
 *
 * # Safety
 * `scores` and `labels` must hold `n` elements and `out` must be writable.
 */
enum LatkdStatus latkd_auprc(const double *scores, const uint8_t *labels, size_t n, double *out);

/**
 * Mean over rows of `CE(label, p) + kl_weight * sum_i T^2 KL(q_i || p)` for
 * two-class distributions.
 *
 * `predictions` is `n × 2`; `teachers` holds `n_teachers` consecutive `n × 2`
 * blocks and may be null when `n_teachers` is 0.
 *
 * # Safety
 * All arrays must have the documented lengths and `out` must be writable.
 */
enum LatkdStatus latkd_composite_loss(const double *predictions,
                                      const uint8_t *labels,
                                      size_t n,
                                      const double *teachers,
                                      size_t n_teachers,
                                      double kl_weight,
                                      double temperature,
                                      double *out);

/**
 * Message of the last failed call on this thread, or null. The pointer stays
 * valid until the next call into this library on the same thread.
 */
const char *latkd_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *latkd_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LATKD_H */
