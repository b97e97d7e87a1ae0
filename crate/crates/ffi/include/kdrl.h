/* C interface to the kdrl training laboratory. */

#ifndef KDRL_H
#define KDRL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible entry point.
 */
typedef enum KdrlStatus {
  KDRL_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  KDRL_STATUS_NULL_ARGUMENT = 1,
  /**
   * An argument failed validation.
   */
  KDRL_STATUS_INVALID_ARGUMENT = 2,
  /**
   * The config file failed to parse or validate.
   */
  KDRL_STATUS_INVALID_CONFIG = 3,
  /**
   * Filesystem problem (missing file, unwritable directory, ...).
   */
  KDRL_STATUS_IO = 4,
  /**
   * Checkpoint, dataset, and policy shapes do not fit together.
   */
  KDRL_STATUS_INCOMPATIBLE = 5,
  /**
   * Numeric failure (non-finite loss, enumeration budget, weak teacher).
   */
  KDRL_STATUS_NUMERIC = 6,
  /**
   * Unexpected internal failure; details in the error message.
   */
  KDRL_STATUS_INTERNAL = 7,
} KdrlStatus;

/**
 * Opaque handle: a question dataset.
 */
typedef struct KdrlDataset KdrlDataset;

/**
 * Opaque handle: a policy loaded from a checkpoint.
 */
typedef struct KdrlPolicy KdrlPolicy;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static C string.
 */
const char *kdrl_version(void);

/**
 * Most recent error message raised on this thread, or null. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *kdrl_last_error_message(void);

/**
 * Load a policy checkpoint.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string; `out` must be a valid
 * pointer. On success `*out` owns the policy and must be released with
 * [`kdrl_policy_free`].
 */
enum KdrlStatus kdrl_policy_load(const char *path, struct KdrlPolicy **out);

/**
 * # Safety
 * `policy` must be null or a pointer returned by [`kdrl_policy_load`], not
 * yet freed.
 */
void kdrl_policy_free(struct KdrlPolicy *policy);

/**
 * Load a dataset file.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string; `out` must be a valid
 * pointer. On success `*out` must be released with [`kdrl_dataset_free`].
 */
enum KdrlStatus kdrl_dataset_load(const char *path, struct KdrlDataset **out);

/**
 * # Safety
 * `dataset` must be null or a pointer returned by [`kdrl_dataset_load`],
 * not yet freed.
 */
void kdrl_dataset_free(struct KdrlDataset *dataset);

/**
 * Number of questions in a dataset.
 *
 * # Safety
 * `dataset` must be a live handle from [`kdrl_dataset_load`].
 */
uintptr_t kdrl_dataset_len(const struct KdrlDataset *dataset);

/**
 * Mean pass rate of a policy over a dataset at `n_samples` decoding runs per
 * question (temperature 1).
 *
 * # Safety
 * `policy` and `dataset` must be live handles; `out_rate` must be valid.
 */
enum KdrlStatus kdrl_eval_mean_pass_rate(const struct KdrlPolicy *policy,
                                         const struct KdrlDataset *dataset,
                                         uint32_t n_samples,
                                         uint64_t seed,
                                         uint32_t max_len,
                                         double *out_rate);

/**
 * Run a full training job from a TOML config file, writing the manifest,
 * metrics stream, and checkpoints. `out_dir` (optional) overrides the
 * config's output directory; `out_final_reward_ema` (optional) receives the
 * final smoothed training reward.
 *
 * # Safety
 * `config_path` must be a valid NUL-terminated string; `out_dir` must be
 * null or a valid NUL-terminated string; `out_final_reward_ema` must be
 * null or a valid pointer.
 */
enum KdrlStatus kdrl_train_from_config(const char *config_path,
                                       const char *out_dir,
                                       double *out_final_reward_ema);

/**
 * Run the exact-oracle identity suite. `out_all_passed` (optional) receives
 * the verdict; `out_report_jsonl` (optional) receives a newly allocated
 * JSONL report to be released with [`kdrl_string_free`].
 *
 * # Safety
 * Out-pointers must be null or valid.
 */
enum KdrlStatus kdrl_oracle_check(double budget,
                                  uint64_t seed,
                                  bool *out_all_passed,
                                  char **out_report_jsonl);

/**
 * Release a string allocated by this library.
 *
 * # Safety
 * `s` must be null or a pointer produced by this library's `out_*` string
 * parameters, not yet freed.
 */
void kdrl_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KDRL_H */
