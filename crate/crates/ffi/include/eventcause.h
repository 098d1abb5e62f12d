#ifndef EVENTCAUSE_H
#define EVENTCAUSE_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes of every fallible call.
 */
typedef enum EcStatus {
  EC_STATUS_OK = 0,
  /**
   * A null pointer, bad UTF-8 or an undersized output buffer.
   */
  EC_STATUS_INVALID_ARGUMENT = 1,
  EC_STATUS_CONFIG = 2,
  EC_STATUS_IO = 3,
  EC_STATUS_CHECKPOINT = 4,
  EC_STATUS_DATA = 5,
  EC_STATUS_UNDEFINED_METRIC = 6,
  EC_STATUS_RUNTIME = 7,
  EC_STATUS_PANIC = 8,
} EcStatus;

/**
 * A trained stage-1 model.
 */
typedef struct EcCausalModel EcCausalModel;

/**
 * Samples and split of one run.
 */
typedef struct EcDataset EcDataset;

/**
 * A trained stage-2 model.
 */
typedef struct EcPredictor EcPredictor;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *ec_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ec_version(void);

/**
 * Generates a synthetic dataset from a JSON run configuration (an empty
 * string selects the defaults).
 *
 * # Safety
 * `config_json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum EcStatus ec_dataset_synthetic(const char *config_json, struct EcDataset **out);

/**
 * Loads an event CSV (and optional adjacency CSV, may be null).
 *
 * # Safety
 * String arguments must be NUL-terminated; `out` must be valid.
 */
enum EcStatus ec_dataset_from_csv(const char *config_json,
                                  const char *events_path,
                                  const char *adjacency_path,
                                  struct EcDataset **out);

/**
 * # Safety
 * `dataset` must come from an `ec_dataset_*` constructor or be null.
 */
void ec_dataset_free(struct EcDataset *dataset);

/**
 * Number of samples; 0 for a null handle.
 *
 * # Safety
 * `dataset` must be a live handle or null.
 */
size_t ec_dataset_len(const struct EcDataset *dataset);

/**
 * Writes the factual outcome (0 or 1) of every sample into `labels`.
 *
 * # Safety
 * `labels` must hold `len` bytes.
 */
enum EcStatus ec_dataset_labels(const struct EcDataset *dataset, uint8_t *labels, size_t len);

/**
 * Writes the sample indices of the test split into `indices` and their
 * count into `count`. Pass a null buffer to query the count alone.
 *
 * # Safety
 * `indices` must hold `len` values unless null; `count` must be valid.
 */
enum EcStatus ec_dataset_test_indices(const struct EcDataset *dataset,
                                      size_t *indices,
                                      size_t len,
                                      size_t *count);

/**
 * Trains a causal model on the dataset with the dataset's configuration.
 *
 * # Safety
 * `dataset` must be live and `out` valid.
 */
enum EcStatus ec_causal_train(const struct EcDataset *dataset, struct EcCausalModel **out);

/**
 * # Safety
 * `path` must be NUL-terminated and `out` valid.
 */
enum EcStatus ec_causal_load(const char *path, struct EcCausalModel **out);

/**
 * Saves a causal model; `config_hash` (may be null) is recorded in the
 * manifest.
 *
 * # Safety
 * `model` must be live; strings NUL-terminated.
 */
enum EcStatus ec_causal_save(const struct EcCausalModel *model,
                             const char *path,
                             const char *config_hash);

/**
 * # Safety
 * `model` must come from `ec_causal_*` or be null.
 */
void ec_causal_free(struct EcCausalModel *model);

/**
 * Number of treatment types the model was built for; 0 for null.
 *
 * # Safety
 * `model` must be live or null.
 */
size_t ec_causal_event_types(const struct EcCausalModel *model);

/**
 * Writes the estimated ITE of `treatment` for every sample of `dataset`.
 *
 * # Safety
 * Handles must be live; `ite` must hold `len` values.
 */
enum EcStatus ec_causal_predict_ite(const struct EcCausalModel *model,
                                    const struct EcDataset *dataset,
                                    size_t treatment,
                                    double *ite,
                                    size_t len);

/**
 * # Safety
 * `path` must be NUL-terminated and `out` valid.
 */
enum EcStatus ec_predictor_load(const char *path, struct EcPredictor **out);

/**
 * # Safety
 * `predictor` must come from `ec_predictor_load` or be null.
 */
void ec_predictor_free(struct EcPredictor *predictor);

/**
 * Writes the event probability of every sample. `causal` supplies the
 * guidance and is required when the predictor uses reweighting or the
 * constraint; otherwise it may be null.
 *
 * # Safety
 * Handles must be live or null as described; `probs` must hold `len` values.
 */
enum EcStatus ec_predictor_predict(const struct EcPredictor *predictor,
                                   const struct EcCausalModel *causal,
                                   const struct EcDataset *dataset,
                                   double *probs,
                                   size_t len);

/**
 * Balanced accuracy at threshold 0.5. Labels are 0 or nonzero.
 *
 * # Safety
 * `probs` and `labels` must hold `n` values; `out` must be valid.
 */
enum EcStatus ec_bacc(const double *probs, const uint8_t *labels, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EVENTCAUSE_H */
