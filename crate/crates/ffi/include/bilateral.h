#ifndef BILATERAL_H
#define BILATERAL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum BilateralStatus {
  BILATERAL_STATUS_OK = 0,
  BILATERAL_STATUS_NULL_POINTER = 1,
  BILATERAL_STATUS_INVALID_UTF8 = 2,
  BILATERAL_STATUS_INVALID_ARGUMENT = 3,
  BILATERAL_STATUS_INVALID_CONFIG = 4,
  BILATERAL_STATUS_EMPTY_WINDOW = 5,
  BILATERAL_STATUS_OUT_OF_ORDER_BATCH = 6,
  BILATERAL_STATUS_LENGTH_MISMATCH = 7,
  BILATERAL_STATUS_BUFFER_TOO_SMALL = 8,
  BILATERAL_STATUS_INTERNAL = 99,
} BilateralStatus;

typedef enum BilateralF1Mode {
  BILATERAL_F1_MODE_SET = 0,
  BILATERAL_F1_MODE_BAG = 1,
} BilateralF1Mode;

typedef enum BilateralVariant {
  BILATERAL_VARIANT_BILATERAL = 0,
  BILATERAL_VARIANT_BASE = 1,
  BILATERAL_VARIANT_LENGTH = 2,
  BILATERAL_VARIANT_SHORT = 3,
  BILATERAL_VARIANT_LENGTH_RP = 4,
} BilateralVariant;

/**
 * Opaque trajectory cache of per-completion summaries.
 */
typedef struct BilateralCache BilateralCache;

/**
 * Opaque reward scorer holding a validated configuration.
 */
typedef struct BilateralScorer BilateralScorer;

typedef struct BilateralF1 {
  double precision;
  double recall;
  double f1;
} BilateralF1;

typedef struct BilateralStats {
  double mean_length;
  double mean_f1;
  size_t group_count;
} BilateralStats;

/**
 * Numeric reward parameters. Fill with [`bilateral_reward_params_default`]
 * and adjust before creating a scorer.
 */
typedef struct BilateralRewardParams {
  double w_f1;
  double w_fmt;
  double w_length;
  double w_short;
  double delta;
  double tau_minus;
  double tau_plus;
  double tau_rep;
  double l_plus;
  double s_minus;
  double eps;
  enum BilateralVariant variant;
  enum BilateralF1Mode f1_mode;
} BilateralRewardParams;

/**
 * Per-completion reward inputs.
 */
typedef struct BilateralComponents {
  double f1;
  /**
   * 0 or 1.
   */
  uint8_t fmt;
  double rep;
  size_t length;
} BilateralComponents;

typedef struct BilateralBreakdown {
  double f1;
  uint8_t fmt;
  double br;
  double rep;
  double length_term;
  double final_reward;
} BilateralBreakdown;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the most recent failure on this thread. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *bilateral_last_error(void);

/**
 * Token F1 between two texts.
 *
 * # Safety
 * `pred` and `gold` must be valid NUL-terminated strings; `out` must be
 * writable.
 */
enum BilateralStatus bilateral_token_f1(const char *pred,
                                        const char *gold,
                                        enum BilateralF1Mode f1_mode,
                                        struct BilateralF1 *out);

/**
 * 1 when `output` follows the think-then-answer grammar, else 0.
 *
 * # Safety
 * `output` must be a valid NUL-terminated string; `out` must be writable.
 */
enum BilateralStatus bilateral_format_reward(const char *output, uint8_t *out);

/**
 * Capped 4-gram repetition ratio of a think segment.
 *
 * # Safety
 * `think` must be a valid NUL-terminated string; `out` must be writable.
 */
enum BilateralStatus bilateral_repetition_penalty(const char *think,
                                                  double tau_rep,
                                                  double eps,
                                                  double *out);

/**
 * Index of the option with the strictly highest F1 against `answer`, or -1
 * when the best score is tied (the "E" outcome).
 *
 * # Safety
 * `answer` and each of the `n` entries of `options` must be valid
 * NUL-terminated strings; `out_index` must be writable.
 */
enum BilateralStatus bilateral_match_option(const char *answer,
                                            const char *const *options,
                                            size_t n,
                                            enum BilateralF1Mode f1_mode,
                                            int64_t *out_index);

/**
 * Normalized advantages `(r - mean) / (std + adv_eps)` with the population
 * standard deviation. `out` must hold `n` values.
 *
 * # Safety
 * `rewards` must point to `n` readable values and `out` to `n` writable
 * values.
 */
enum BilateralStatus bilateral_advantages(const double *rewards,
                                          size_t n,
                                          double adv_eps,
                                          double *out);

/**
 * Mean length and mean F1 over `n` completions.
 *
 * # Safety
 * `lengths` and `f1s` must point to `n` readable values; `out` must be
 * writable.
 */
enum BilateralStatus bilateral_window_stats(const size_t *lengths,
                                            const double *f1s,
                                            size_t n,
                                            struct BilateralStats *out);

/**
 * Default reward parameters.
 *
 * # Safety
 * `out` must be writable.
 */
enum BilateralStatus bilateral_reward_params_default(struct BilateralRewardParams *out);

/**
 * Validate `params` and create a scorer. Release with
 * [`bilateral_scorer_free`].
 *
 * # Safety
 * `params` must be readable and `out` writable.
 */
enum BilateralStatus bilateral_scorer_new(const struct BilateralRewardParams *params,
                                          struct BilateralScorer **out);

/**
 * # Safety
 * `scorer` must be NULL or a handle from [`bilateral_scorer_new`] that has
 * not been freed.
 */
void bilateral_scorer_free(struct BilateralScorer *scorer);

/**
 * F1, format flag and repetition penalty of one completion against `gold`.
 * `length` is the completion length used by the length-shaped terms.
 *
 * # Safety
 * `scorer` must be a live handle, the strings valid, and `out` writable.
 */
enum BilateralStatus bilateral_scorer_components(const struct BilateralScorer *scorer,
                                                 const char *output,
                                                 const char *gold,
                                                 size_t length,
                                                 struct BilateralComponents *out);

/**
 * Final reward of one completion given window statistics.
 *
 * # Safety
 * All pointers must be valid; `scorer` must be a live handle.
 */
enum BilateralStatus bilateral_scorer_final(const struct BilateralScorer *scorer,
                                            const struct BilateralComponents *components,
                                            const struct BilateralStats *stats,
                                            struct BilateralBreakdown *out);

/**
 * Create an empty cache holding at most `capacity` batches. Release with
 * [`bilateral_cache_free`].
 *
 * # Safety
 * `out` must be writable.
 */
enum BilateralStatus bilateral_cache_new(size_t capacity, struct BilateralCache **out);

/**
 * # Safety
 * `cache` must be NULL or a handle from [`bilateral_cache_new`] that has
 * not been freed.
 */
void bilateral_cache_free(struct BilateralCache *cache);

/**
 * Append a batch of `n` completion summaries, evicting the oldest batch when
 * full. Batch ids must strictly increase.
 *
 * # Safety
 * `cache` must be a live handle and the arrays must hold `n` values each.
 */
enum BilateralStatus bilateral_cache_push(struct BilateralCache *cache,
                                          uint64_t batch_id,
                                          size_t created_step,
                                          const size_t *lengths,
                                          const double *f1s,
                                          const double *final_rewards,
                                          size_t n);

/**
 * Number of batches and of completions currently cached.
 *
 * # Safety
 * `cache` must be a live handle; out-pointers may be NULL.
 */
enum BilateralStatus bilateral_cache_len(const struct BilateralCache *cache,
                                         size_t *out_batches,
                                         size_t *out_groups);

/**
 * Window means over every cached completion.
 *
 * # Safety
 * `cache` must be a live handle and `out` writable.
 */
enum BilateralStatus bilateral_cache_window_stats(const struct BilateralCache *cache,
                                                  struct BilateralStats *out);

/**
 * Normalized advantages over the cached window, oldest completion first.
 * Writes the window size to `out_len`; if `capacity` is smaller, nothing
 * else is written and [`BilateralStatus::BufferTooSmall`] is returned.
 *
 * # Safety
 * `cache` must be a live handle, `out` must hold `capacity` values, and
 * `out_len` must be writable.
 */
enum BilateralStatus bilateral_cache_advantages(const struct BilateralCache *cache,
                                                double adv_eps,
                                                double *out,
                                                size_t capacity,
                                                size_t *out_len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *bilateral_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BILATERAL_H */
