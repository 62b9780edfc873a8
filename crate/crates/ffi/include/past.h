#ifndef PAST_H
#define PAST_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum PastStatus {
  PAST_STATUS_OK = 0,
  PAST_STATUS_NULL_POINTER = 1,
  PAST_STATUS_INVALID_ARGUMENT = 2,
  PAST_STATUS_IO = 3,
  PAST_STATUS_PARSE = 4,
  PAST_STATUS_SHAPE_MISMATCH = 5,
  PAST_STATUS_NON_FINITE = 6,
  PAST_STATUS_TRAINING = 7,
  PAST_STATUS_EVALUATION = 8,
  PAST_STATUS_PANIC = 9,
} PastStatus;

// A labeled or unlabeled set of feature rows.
typedef struct PastDataset PastDataset;

// An embedding network.
typedef struct PastModel PastModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. The pointer stays
// valid until the next call into this library from the same thread.
const char *past_last_error(void);

// Reads the `id,identity,camera,f0,...` CSV format.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum PastStatus past_dataset_read_csv(const char *path, struct PastDataset **out);

// Builds a dataset from a row-major `rows x cols` array. `identities` and
// `cameras` may be NULL; otherwise they hold `rows` entries.
//
// # Safety
// Pointers must reference arrays of the stated sizes.
enum PastStatus past_dataset_from_features(const double *data,
                                           size_t rows,
                                           size_t cols,
                                           const uint32_t *identities,
                                           const uint32_t *cameras,
                                           struct PastDataset **out);

// # Safety
// `dataset` must be NULL or a live handle.
size_t past_dataset_len(const struct PastDataset *dataset);

// # Safety
// `dataset` must be NULL or a live handle.
size_t past_dataset_dim(const struct PastDataset *dataset);

// # Safety
// `dataset` must be NULL or a handle not yet freed.
void past_dataset_free(struct PastDataset *dataset);

// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum PastStatus past_model_load(const char *path, struct PastModel **out);

// # Safety
// `model` must be a live handle and `path` a NUL-terminated string.
enum PastStatus past_model_save(const struct PastModel *model, const char *path);

// # Safety
// `model` must be NULL or a live handle.
size_t past_model_input_dim(const struct PastModel *model);

// # Safety
// `model` must be NULL or a live handle.
size_t past_model_embedding_dim(const struct PastModel *model);

// # Safety
// `model` must be NULL or a handle not yet freed.
void past_model_free(struct PastModel *model);

// Trains an embedder on a labeled source dataset with the default
// pretraining settings and the given seed.
//
// # Safety
// `source` must be a live handle and `out` a valid pointer.
enum PastStatus past_pretrain(const struct PastDataset *source,
                              uint64_t seed,
                              struct PastModel **out);

// Adapts `initial` to the unlabeled `target`. `config_path` names a
// `key = value` file and may be NULL for the defaults.
//
// # Safety
// Handles must be live, `config_path` NULL or NUL-terminated, `out` valid.
enum PastStatus past_adapt(const struct PastModel *initial,
                           const struct PastDataset *source,
                           const struct PastDataset *target,
                           const char *config_path,
                           struct PastModel **out);

// Writes `len(dataset) x embedding_dim` unit-norm embeddings, row-major.
//
// # Safety
// Handles must be live and `out` must hold `out_len` doubles.
enum PastStatus past_extract_features(const struct PastModel *model,
                                      const struct PastDataset *dataset,
                                      double *out,
                                      size_t out_len);

// k-reciprocal Jaccard distances between the rows of a `rows x cols`
// feature array, written as a row-major `rows x rows` matrix.
//
// # Safety
// `features` must hold `rows * cols` doubles and `out` `out_len` doubles.
enum PastStatus past_jaccard(const double *features,
                             size_t rows,
                             size_t cols,
                             size_t k1,
                             size_t k2,
                             double *out,
                             size_t out_len);

// HDBSCAN over an `n x n` distance matrix. Writes one label per sample
// (`-1` for noise) and the number of clusters.
//
// # Safety
// `dist` must hold `n * n` doubles, `labels` `n` ints, `num_clusters` valid.
enum PastStatus past_hdbscan(const double *dist,
                             size_t n,
                             size_t s_min,
                             int32_t *labels,
                             size_t *num_clusters);

// Rank-1 and mAP of `model` on a labeled query/gallery split.
//
// # Safety
// Handles must be live and the output pointers valid.
enum PastStatus past_evaluate(const struct PastModel *model,
                              const struct PastDataset *query,
                              const struct PastDataset *gallery,
                              double *rank1,
                              double *map);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PAST_H */
