#ifndef PROBEKIT_H
#define PROBEKIT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum PkStatus {
  PK_STATUS_OK = 0,
  PK_STATUS_NULL_POINTER = 1,
  PK_STATUS_INVALID_ARGUMENT = 2,
  PK_STATUS_DIM_MISMATCH = 3,
  PK_STATUS_FORMAT = 4,
  PK_STATUS_IO = 5,
  PK_STATUS_DOMAIN = 6,
  PK_STATUS_LABEL = 7,
  PK_STATUS_PANIC = 8,
} PkStatus;

// A set of clip embeddings read from an embedding file.
typedef struct PkEmbeddingSet PkEmbeddingSet;

// A trained linear probe.
typedef struct PkModel PkModel;

// Per-dimension statistics for z-score plus l2 normalization.
typedef struct PkNormalizer PkNormalizer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *pk_version(void);

// Message of the last failed call on this thread, or an empty string. The
// pointer stays valid until the next failing call on the same thread.
const char *pk_last_error(void);

// Reads an embedding file into a new handle stored in `*out`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
enum PkStatus pk_embeddings_read(const char *path, struct PkEmbeddingSet **out);

// Number of embeddings; 0 for a null handle.
//
// # Safety
// `set` must be null or a live handle.
size_t pk_embeddings_len(const struct PkEmbeddingSet *set);

// Vector dimension; 0 for a null handle.
//
// # Safety
// `set` must be null or a live handle.
size_t pk_embeddings_dim(const struct PkEmbeddingSet *set);

// Copies embedding `index` into `out`, which holds `out_len` values.
//
// # Safety
// `set` must be a live handle and `out` valid for `out_len` writes.
enum PkStatus pk_embeddings_vector(const struct PkEmbeddingSet *set,
                                   size_t index,
                                   double *out,
                                   size_t out_len);

// # Safety
// `set` must be null or a handle not yet freed.
void pk_embeddings_free(struct PkEmbeddingSet *set);

// Fits normalization statistics on every vector of `set`.
//
// # Safety
// `set` must be a live handle and `out` a writable pointer.
enum PkStatus pk_normalizer_fit(const struct PkEmbeddingSet *set,
                                double epsilon,
                                struct PkNormalizer **out);

// Normalizes one vector of length `dim` into `out`. `degenerate`, when not
// null, receives whether the result is the zero vector.
//
// # Safety
// `x` must be valid for `dim` reads, `out` for `out_len` writes, and
// `degenerate` null or writable.
enum PkStatus pk_normalizer_apply(const struct PkNormalizer *norm,
                                  const double *x,
                                  size_t dim,
                                  double *out,
                                  size_t out_len,
                                  bool *degenerate);

// # Safety
// `norm` must be null or a handle not yet freed.
void pk_normalizer_free(struct PkNormalizer *norm);

// Reads a probe model file into a new handle stored in `*out`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
enum PkStatus pk_model_read(const char *path, struct PkModel **out);

// Number of classes; 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t pk_model_n_classes(const struct PkModel *model);

// Input dimension; 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t pk_model_dim(const struct PkModel *model);

// True for independent sigmoid outputs, false for softmax.
//
// # Safety
// `model` must be null or a live handle.
bool pk_model_is_multilabel(const struct PkModel *model);

// Class probabilities for one vector of length `dim`.
//
// # Safety
// `x` must be valid for `dim` reads and `out` for `out_len` writes.
enum PkStatus pk_model_predict(const struct PkModel *model,
                               const double *x,
                               size_t dim,
                               double *out,
                               size_t out_len);

// # Safety
// `model` must be null or a handle not yet freed.
void pk_model_free(struct PkModel *model);

// Average precision of `n` scores against 0/1 truths. Fails with
// `DOMAIN` when no truth is positive.
//
// # Safety
// `scores` and `truths` must be valid for `n` reads; `out` writable.
enum PkStatus pk_average_precision(const double *scores,
                                   const uint8_t *truths,
                                   size_t n,
                                   double *out);

// Mean average precision over the classes of an `n × c` table.
//
// # Safety
// `scores` and `truths` must be valid for `n * c` reads; `out` writable.
enum PkStatus pk_map(const double *scores, const uint8_t *truths, size_t n, size_t c, double *out);

// Macro-averaged ROC AUC of an `n × c` table.
//
// # Safety
// `scores` and `truths` must be valid for `n * c` reads; `out` writable.
enum PkStatus pk_mauc(const double *scores, const uint8_t *truths, size_t n, size_t c, double *out);

// Label-weighted label-ranking average precision of an `n × c` table.
//
// # Safety
// `scores` and `truths` must be valid for `n * c` reads; `out` writable.
enum PkStatus pk_lwlrap(const double *scores,
                        const uint8_t *truths,
                        size_t n,
                        size_t c,
                        double *out);

// Fraction of rows whose label is among the `k` highest of `c` scores.
//
// # Safety
// `scores` must be valid for `n * c` reads, `labels` for `n`; `out` writable.
enum PkStatus pk_top_k_accuracy(const double *scores,
                                const size_t *labels,
                                size_t n,
                                size_t c,
                                size_t k,
                                double *out);

// Linear-softmax pooling of `t` frames of `c` probabilities into `out`.
//
// # Safety
// `probs` must be valid for `t * c` reads and `out` for `out_len` writes.
enum PkStatus pk_linear_softmax_pool(const double *probs,
                                     size_t t,
                                     size_t c,
                                     double *out,
                                     size_t out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PROBEKIT_H */
