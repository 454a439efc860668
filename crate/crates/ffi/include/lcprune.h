#ifndef LCPRUNE_H
#define LCPRUNE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LcpStatus {
  LCP_STATUS_OK = 0,
  LCP_STATUS_NULL_POINTER = -1,
  LCP_STATUS_INVALID_UTF8 = -2,
  LCP_STATUS_USAGE = -3,
  LCP_STATUS_VALIDATION = -4,
  LCP_STATUS_NUMERICAL = -5,
  LCP_STATUS_BUFFER_TOO_SMALL = -6,
  LCP_STATUS_PANIC = -7,
} LcpStatus;

/**
 * Opaque handle to a loaded, validated pack.
 */
typedef struct LcpPack LcpPack;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` as a
 * NUL-terminated string, truncating to fit. Returns the full message length
 * in bytes, excluding the terminator.
 *
 * # Safety
 * `buf` must be valid for `len` bytes or null.
 */
size_t lcp_last_error_message(char *buf, size_t len);

/**
 * Loads a pack from a `pack.json` path or its directory.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid for a write.
 */
enum LcpStatus lcp_pack_load(const char *path, struct LcpPack **out);

/**
 * Releases a pack. Null is ignored.
 *
 * # Safety
 * `pack` must come from [`lcp_pack_load`] and not be used afterwards.
 */
void lcp_pack_free(struct LcpPack *pack);

/**
 * Sample count, or 0 for a null handle.
 *
 * # Safety
 * `pack` must be a live handle or null.
 */
size_t lcp_pack_num_samples(const struct LcpPack *pack);

/**
 * Layer count, or 0 for a null handle.
 *
 * # Safety
 * `pack` must be a live handle or null.
 */
size_t lcp_pack_num_layers(const struct LcpPack *pack);

/**
 * # Safety
 * `pack` must be a live handle; `out_dim` valid for a write.
 */
enum LcpStatus lcp_pack_layer_dim(const struct LcpPack *pack, size_t layer, size_t *out_dim);

/**
 * Learning-complexity score of every sample, averaged over all layers with
 * the sample itself excluded from its neighbours. `out_scores` must hold
 * `len == num_samples` doubles.
 *
 * # Safety
 * `pack` must be a live handle; `out_scores` valid for `len` writes.
 */
enum LcpStatus lcp_lc_score(const struct LcpPack *pack,
                            size_t k,
                            double tie_epsilon,
                            double *out_scores,
                            size_t len);

/**
 * Mean reciprocal perplexity of each row of a `rows x cols` row-major matrix.
 *
 * # Safety
 * `perplexities` valid for `rows * cols` reads; `out_scores` for `rows` writes.
 */
enum LcpStatus lcp_lc_regression_score(const float *perplexities,
                                       size_t rows,
                                       size_t cols,
                                       double *out_scores);

/**
 * Spearman rank correlation with fractional ranks for ties.
 *
 * # Safety
 * `a`, `b` valid for `n` reads; `out_rho` for a write.
 */
enum LcpStatus lcp_spearman(const double *a, const double *b, size_t n, double *out_rho);

/**
 * `floor(eta * n)`, the number of samples every selector keeps.
 *
 * # Safety
 * `out_m` must be valid for a write.
 */
enum LcpStatus lcp_budget_size(size_t n, double eta, size_t *out_m);

/**
 * Top-k selection. Indices are written ascending; `out_len` receives the
 * count even when the buffer is too small.
 *
 * # Safety
 * `scores` valid for `n` reads; `out_indices` for `capacity` writes.
 */
enum LcpStatus lcp_select_top_k(const double *scores,
                                size_t n,
                                double eta,
                                bool keep_highest,
                                size_t *out_indices,
                                size_t capacity,
                                size_t *out_len);

/**
 * Easy-and-diverse selection: K-means on `layer`, proportional quotas, the
 * easiest samples of each cluster.
 *
 * # Safety
 * `pack` must be a live handle; `scores` valid for `n` reads;
 * `out_indices` for `capacity` writes.
 */
enum LcpStatus lcp_select_easy_diverse(const struct LcpPack *pack,
                                       const double *scores,
                                       size_t n,
                                       bool higher_is_easier,
                                       size_t layer,
                                       size_t k_clusters,
                                       double eta,
                                       uint64_t seed,
                                       size_t *out_indices,
                                       size_t capacity,
                                       size_t *out_len);

/**
 * k-center greedy over an `n x d` row-major feature matrix. A negative
 * `initial` draws the first pick from `seed`. Indices are in pick order.
 *
 * # Safety
 * `features` valid for `n * d` reads; `out_indices` for `capacity` writes.
 */
enum LcpStatus lcp_select_kcenter(const float *features,
                                  size_t n,
                                  size_t d,
                                  double eta,
                                  uint64_t seed,
                                  int64_t initial,
                                  size_t *out_indices,
                                  size_t capacity,
                                  size_t *out_len);

/**
 * Mean nearest-neighbour distance within `subset` of an `n x d` matrix.
 *
 * # Safety
 * `features` valid for `n * d` reads; `subset` for `m` reads.
 */
enum LcpStatus lcp_diversity(const float *features,
                             size_t n,
                             size_t d,
                             const size_t *subset,
                             size_t m,
                             double *out_delta);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LCPRUNE_H */
