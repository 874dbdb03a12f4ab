#ifndef MINT_H
#define MINT_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes.
 */
typedef enum MintStatus {
  MINT_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  MINT_STATUS_NULL_POINTER = 1,
  /**
   * Inputs or options were rejected.
   */
  MINT_STATUS_INVALID = 2,
  /**
   * Rank deficiency or another numerical failure.
   */
  MINT_STATUS_NUMERICAL = 3,
  /**
   * File could not be read or parsed.
   */
  MINT_STATUS_IO = 4,
  /**
   * Internal panic; the library state is unaffected.
   */
  MINT_STATUS_PANIC = 5,
} MintStatus;

typedef enum MintMethod {
  MINT_METHOD_MINT = 0,
  MINT_METHOD_MINT_NO_BOOTSTRAP = 1,
  MINT_METHOD_TRANSPORTABILITY = 2,
  MINT_METHOD_KERNEL_MINT = 3,
} MintMethod;

/**
 * Opaque dataset handle.
 */
typedef struct MintDataset MintDataset;

/**
 * Test options. Obtain defaults from [`mint_options_default`].
 */
typedef struct MintOptions {
  enum MintMethod method;
  /**
   * Polynomial degree of both working models.
   */
  uint32_t degree;
  double alpha;
  uint32_t resamples;
  uint64_t seed;
} MintOptions;

typedef struct MintTestOutput {
  double statistic;
  double threshold;
  double p_value;
  /**
   * 1 if the null was rejected.
   */
  uint8_t reject;
} MintTestOutput;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Builds a dataset from row-major arrays. Rows sharing an environment
 * label form one environment; environments are ordered by label.
 *
 * # Safety
 * `env`, `a` and `y` must point to `n_rows` values and `x` to
 * `n_rows * d` values. `out` must be writable.
 */
enum MintStatus mint_dataset_new(const uint32_t *env,
                                 const double *x,
                                 const double *a,
                                 const double *y,
                                 size_t n_rows,
                                 size_t d,
                                 struct MintDataset **out);

/**
 * Reads a CSV file with columns `env`, `a`, `y` and covariates.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum MintStatus mint_dataset_load_csv(const char *path, struct MintDataset **out);

/**
 * Releases a dataset. Null is ignored.
 *
 * # Safety
 * `dataset` must come from this library and not be used afterwards.
 */
void mint_dataset_free(struct MintDataset *dataset);

/**
 * Number of environments, or 0 for null.
 *
 * # Safety
 * `dataset` must be null or a live handle.
 */
size_t mint_dataset_environments(const struct MintDataset *dataset);

/**
 * Number of covariates, or 0 for null.
 *
 * # Safety
 * `dataset` must be null or a live handle.
 */
size_t mint_dataset_covariates(const struct MintDataset *dataset);

struct MintOptions mint_options_default(void);

/**
 * Runs a test on the dataset.
 *
 * # Safety
 * `dataset` must be a live handle, `options` readable (null means
 * defaults) and `out` writable.
 */
enum MintStatus mint_run_test(const struct MintDataset *dataset,
                              const struct MintOptions *options,
                              struct MintTestOutput *out);

/**
 * Frobenius statistic of row-major `k x z` and `k x z2` coefficient
 * matrices.
 *
 * # Safety
 * `omegas` must hold `k * z` values, `gammas` `k * z2` values and `out`
 * must be writable.
 */
enum MintStatus mint_frobenius_statistic(const double *omegas,
                                         const double *gammas,
                                         size_t k,
                                         size_t z,
                                         size_t z2,
                                         double *out);

/**
 * Message for the last failed call on this thread, or null. The pointer
 * stays valid until the next library call on the same thread.
 */
const char *mint_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *mint_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MINT_H */
