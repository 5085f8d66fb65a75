#ifndef ESGNN_H
#define ESGNN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum EsgnnStatus {
  ESGNN_STATUS_OK = 0,
  ESGNN_STATUS_NULL_POINTER = 1,
  ESGNN_STATUS_INVALID_ARGUMENT = 2,
  ESGNN_STATUS_IO = 3,
  ESGNN_STATUS_PARSE = 4,
  ESGNN_STATUS_SHAPE = 5,
  ESGNN_STATUS_NON_FINITE = 6,
  ESGNN_STATUS_INFEASIBLE = 7,
  ESGNN_STATUS_CONTRACT = 8,
  ESGNN_STATUS_CAPABILITY = 9,
  ESGNN_STATUS_DIVERGED = 10,
  ESGNN_STATUS_BUFFER_TOO_SMALL = 11,
  ESGNN_STATUS_PANIC = 12,
} EsgnnStatus;

// Feature preprocessing selector.
typedef enum EsgnnFeatureNorm {
  ESGNN_FEATURE_NORM_NONE = 0,
  ESGNN_FEATURE_NORM_ROW_L1 = 1,
  ESGNN_FEATURE_NORM_ROW_L2 = 2,
  ESGNN_FEATURE_NORM_STANDARDIZE = 3,
} EsgnnFeatureNorm;

// A loaded or generated dataset.
typedef struct EsgnnDataset EsgnnDataset;

// A trained model: its configuration and parameters.
typedef struct EsgnnModel EsgnnModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failing call on this thread, or null. The pointer
// stays valid until the next failing call on the same thread.
const char *esgnn_last_error(void);

// Library version as a static NUL-terminated string.
const char *esgnn_version(void);

// Loads a dataset bundle directory.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum EsgnnStatus esgnn_dataset_load(const char *path, struct EsgnnDataset **out);

// Generates the synthetic graph of one homophily target (0.0, 0.1, ...,
// 1.0) with `n` nodes (a multiple of 3).
//
// # Safety
// `out` must be writable.
enum EsgnnStatus esgnn_dataset_generate(double h_target,
                                        size_t n,
                                        uint64_t seed,
                                        struct EsgnnDataset **out);

// Writes the dataset as a bundle directory.
//
// # Safety
// `ds` must come from this library; `path` must be NUL-terminated.
enum EsgnnStatus esgnn_dataset_save(const struct EsgnnDataset *ds, const char *path);

// Applies feature preprocessing in place.
//
// # Safety
// `ds` must come from this library.
enum EsgnnStatus esgnn_dataset_normalize(struct EsgnnDataset *ds, enum EsgnnFeatureNorm norm);

// Node, edge, feature and class counts; any output may be null.
//
// # Safety
// `ds` must come from this library; non-null outputs must be writable.
enum EsgnnStatus esgnn_dataset_shape(const struct EsgnnDataset *ds,
                                     size_t *nodes,
                                     size_t *edges,
                                     size_t *features,
                                     size_t *classes);

// Fraction of edges joining same-label nodes.
//
// # Safety
// `ds` must come from this library; `out` must be writable.
enum EsgnnStatus esgnn_dataset_homophily(const struct EsgnnDataset *ds, double *out);

// Releases a dataset; null is ignored.
//
// # Safety
// `ds` must come from this library and not be used afterwards.
void esgnn_dataset_free(struct EsgnnDataset *ds);

// Trains one model.
//
// `config` holds `key = value` lines over library defaults (may be null);
// `scheme` is `dense`, `sparse` or `rate:<fraction>`; `split_id` selects a
// stored or derived split.
//
// # Safety
// `ds` must come from this library; strings must be NUL-terminated; `out`
// must be writable.
enum EsgnnStatus esgnn_train(const struct EsgnnDataset *ds,
                             const char *config,
                             const char *scheme,
                             size_t split_id,
                             struct EsgnnModel **out);

// Validation and test accuracy recorded at training time (NaN for a
// loaded checkpoint).
//
// # Safety
// `model` must come from this library; non-null outputs must be writable.
enum EsgnnStatus esgnn_model_accuracy(const struct EsgnnModel *model,
                                      double *acc_val,
                                      double *acc_test);

// Evaluation-mode logits, `nodes x classes` row-major into `out`.
//
// # Safety
// `model` and `ds` must come from this library; `out` must hold `len`
// doubles.
enum EsgnnStatus esgnn_model_logits(const struct EsgnnModel *model,
                                    const struct EsgnnDataset *ds,
                                    double *out,
                                    size_t len);

// Final-layer `a_R` per edge (ES-GNN only), in the dataset's edge order.
//
// # Safety
// `model` and `ds` must come from this library; `out` must hold `len`
// doubles.
enum EsgnnStatus esgnn_model_edge_split(const struct EsgnnModel *model,
                                        const struct EsgnnDataset *ds,
                                        double *out,
                                        size_t len);

// Writes a checkpoint directory.
//
// # Safety
// `model` must come from this library; `dir` must be NUL-terminated.
enum EsgnnStatus esgnn_model_save(const struct EsgnnModel *model, const char *dir);

// Reads a checkpoint directory.
//
// # Safety
// `dir` must be NUL-terminated; `out` must be writable.
enum EsgnnStatus esgnn_model_load(const char *dir, struct EsgnnModel **out);

// Releases a model; null is ignored.
//
// # Safety
// `model` must come from this library and not be used afterwards.
void esgnn_model_free(struct EsgnnModel *model);

// Largest deviation between one aggregation step and one gradient step of
// the denoising objective over `trials` random instances.
//
// # Safety
// `max_dev` must be writable.
enum EsgnnStatus esgnn_lemma_check(uint64_t seed,
                                   size_t n,
                                   size_t d,
                                   size_t trials,
                                   double *max_dev);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ESGNN_H */
