#ifndef TIDAL_H
#define TIDAL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum TidalStatus {
  TIDAL_STATUS_OK = 0,
  TIDAL_STATUS_NULL_POINTER = 1,
  TIDAL_STATUS_INVALID_ARGUMENT = 2,
  TIDAL_STATUS_IO = 3,
  TIDAL_STATUS_BAD_CHECKPOINT = 4,
  TIDAL_STATUS_NUMERICAL = 5,
  TIDAL_STATUS_PANIC = 6,
} TidalStatus;

/**
 * Opaque stateful model.
 */
typedef struct TidalModel TidalModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *tidal_last_error(void);

/**
 * Loads a checkpoint file into a new model handle with default options.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum TidalStatus tidal_model_load(const char *path, struct TidalModel **out);

/**
 * Selects the variant (0 full, 1 plain LSTM) and topic lifetime, and resets state.
 *
 * # Safety
 * `model` must come from [`tidal_model_load`].
 */
enum TidalStatus tidal_model_set_options(struct TidalModel *model,
                                         int32_t variant,
                                         bool topics_reinit_daily);

/**
 * Feature count per stock expected by [`tidal_model_step`].
 *
 * # Safety
 * `model` must come from [`tidal_model_load`].
 */
enum TidalStatus tidal_model_input_size(const struct TidalModel *model, size_t *out);

/**
 * Clears the recurrent, topic and expectation state.
 *
 * # Safety
 * `model` must come from [`tidal_model_load`].
 */
enum TidalStatus tidal_model_reset(struct TidalModel *model);

/**
 * Advances the model one day and writes one prediction per stock.
 *
 * `date` is `YYYYMMDD`. `features` holds `n_stocks × input_size` values in row
 * order; `out` receives `n_stocks` predictions.
 *
 * # Safety
 * All pointers must be valid for the stated lengths and `stock_ids` must hold
 * `n_stocks` NUL-terminated strings.
 */
enum TidalStatus tidal_model_step(struct TidalModel *model,
                                  int32_t date,
                                  const char *const *stock_ids,
                                  size_t n_stocks,
                                  const double *features,
                                  double *out);

/**
 * Releases a model handle. NULL is ignored.
 *
 * # Safety
 * `model` must come from [`tidal_model_load`] and not be used afterwards.
 */
void tidal_model_free(struct TidalModel *model);

/**
 * Tanimoto coefficient of two vectors of length `len`.
 *
 * # Safety
 * `a` and `b` must hold `len` values; `out` must be valid.
 */
enum TidalStatus tidal_tanimoto(const double *a, const double *b, size_t len, double *out);

/**
 * Pearson correlation of one day's predictions and realized returns.
 *
 * # Safety
 * Both arrays must hold `len` values; `out` must be valid.
 */
enum TidalStatus tidal_daily_ic(const double *predicted,
                                const double *realized,
                                size_t len,
                                double *out);

/**
 * Spearman correlation (average ranks for ties).
 *
 * # Safety
 * Both arrays must hold `len` values; `out` must be valid.
 */
enum TidalStatus tidal_rank_ic(const double *predicted,
                               const double *realized,
                               size_t len,
                               double *out);

/**
 * Maximum drawdown of an equity curve, as a non-positive fraction.
 *
 * # Safety
 * `equity` must hold `len` values; `out` must be valid.
 */
enum TidalStatus tidal_max_drawdown(const double *equity, size_t len, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TIDAL_H */
