#ifndef EHI_H
#define EHI_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum EhiStatus {
  EHI_STATUS_OK = 0,
  EHI_STATUS_NULL_POINTER = 1,
  EHI_STATUS_INVALID_UTF8 = 2,
  EHI_STATUS_IO = 3,
  /**
   * Not an index file, corrupt, or written by another format version.
   */
  EHI_STATUS_FORMAT = 4,
  EHI_STATUS_INVALID_ARGUMENT = 5,
  EHI_STATUS_DIMENSION_MISMATCH = 6,
  /**
   * A Rust panic was caught at the boundary.
   */
  EHI_STATUS_INTERNAL = 7,
} EhiStatus;

/**
 * A loaded index. Immutable after opening, so a handle may be shared
 * across threads for concurrent searches.
 */
typedef struct EhiIndex EhiIndex;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failure on this thread, or an empty string.
 * The pointer stays valid until the next failing call on this thread.
 */
const char *ehi_last_error(void);

/**
 * Opens an index file. On success `*out` receives a handle that must be
 * released with [`ehi_index_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum EhiStatus ehi_index_open(const char *path, struct EhiIndex **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `index` must come from [`ehi_index_open`] and not be used afterwards.
 */
void ehi_index_free(struct EhiIndex *index);

/**
 * Number of indexed documents, or 0 for a null handle.
 *
 * # Safety
 * `index` must be null or a live handle.
 */
size_t ehi_index_num_docs(const struct EhiIndex *index);

/**
 * Base embedding dimension expected by [`ehi_index_search`].
 *
 * # Safety
 * `index` must be null or a live handle.
 */
size_t ehi_index_dim(const struct EhiIndex *index);

/**
 * Number of leaves; the beam at which search becomes exhaustive.
 *
 * # Safety
 * `index` must be null or a live handle.
 */
size_t ehi_index_num_leaves(const struct EhiIndex *index);

/**
 * 1 for a jointly trained tree, 2 for the k-means inverted file, 0 for null.
 *
 * # Safety
 * `index` must be null or a live handle.
 */
uint32_t ehi_index_kind(const struct EhiIndex *index);

/**
 * Searches with one query. Writes up to `k` results, best first, into
 * `out_docs` / `out_scores` (each with room for `k` entries) and the
 * result count into `*out_len`. `out_visited` may be null; otherwise it
 * receives the fraction of the corpus that was scored.
 *
 * # Safety
 * `query` must point to `dim` floats; output pointers must be valid for
 * `k` writes.
 */
enum EhiStatus ehi_index_search(const struct EhiIndex *index,
                                const float *query,
                                size_t dim,
                                size_t beam,
                                size_t k,
                                uint32_t *out_docs,
                                double *out_scores,
                                size_t *out_len,
                                double *out_visited);

/**
 * The id of document `doc`, or null when out of range. Owned by the handle.
 *
 * # Safety
 * `index` must be null or a live handle.
 */
const char *ehi_index_doc_id(const struct EhiIndex *index, uint32_t doc);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EHI_H */
