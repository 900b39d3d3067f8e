#ifndef HINEMBED_H
#define HINEMBED_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum HinembedStatus {
  HINEMBED_STATUS_OK = 0,
  /**
   * Runtime failure (I/O, numerics, shape mismatch).
   */
  HINEMBED_STATUS_RUNTIME_ERROR = 1,
  /**
   * Configuration or ingestion error.
   */
  HINEMBED_STATUS_CONFIG_ERROR = 2,
  /**
   * A required pointer argument was null.
   */
  HINEMBED_STATUS_NULL_POINTER = 3,
  /**
   * A string argument was not valid UTF-8.
   */
  HINEMBED_STATUS_INVALID_UTF8 = 4,
} HinembedStatus;

/**
 * Opaque graph handle.
 */
typedef struct HinembedHin HinembedHin;

/**
 * Opaque embedding-store handle.
 */
typedef struct HinembedStore HinembedStore;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent error on this thread. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *hinembed_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *hinembed_version(void);

/**
 * Load a binary graph file into a new handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be a valid pointer.
 */
enum HinembedStatus hinembed_hin_load(const char *path, struct HinembedHin **out);

/**
 * Ingest the dataset described by a run-config TOML string.
 *
 * # Safety
 * `config_toml` must be NUL-terminated; `out` must be valid.
 */
enum HinembedStatus hinembed_hin_ingest(const char *config_toml, struct HinembedHin **out);

/**
 * Write a graph handle back to a binary file.
 *
 * # Safety
 * `hin` must come from this library; `path` must be NUL-terminated.
 */
enum HinembedStatus hinembed_hin_save(const struct HinembedHin *hin, const char *path);

/**
 * Number of entities in the global vocabulary; 0 for a null handle.
 *
 * # Safety
 * `hin` must be null or a live handle from this library.
 */
uint64_t hinembed_hin_num_entities(const struct HinembedHin *hin);

/**
 * Number of relation types; 0 for a null handle.
 *
 * # Safety
 * `hin` must be null or a live handle from this library.
 */
uint64_t hinembed_hin_num_relations(const struct HinembedHin *hin);

/**
 * Number of subgraph sources; 0 for a null handle.
 *
 * # Safety
 * `hin` must be null or a live handle from this library.
 */
uint64_t hinembed_hin_num_sources(const struct HinembedHin *hin);

/**
 * Total edge count across sources; 0 for a null handle.
 *
 * # Safety
 * `hin` must be null or a live handle from this library.
 */
uint64_t hinembed_hin_num_edges(const struct HinembedHin *hin);

/**
 * Free a graph handle. Null is a no-op.
 *
 * # Safety
 * `hin` must be null or an unfreed handle from this library.
 */
void hinembed_hin_free(struct HinembedHin *hin);

/**
 * Train embeddings on a graph using a run-config TOML string (the first
 * lambda value if a grid is given).
 *
 * # Safety
 * All pointers must be valid; `config_toml` NUL-terminated.
 */
enum HinembedStatus hinembed_train(const struct HinembedHin *hin,
                                   const char *config_toml,
                                   struct HinembedStore **out);

/**
 * Load an embedding store from its binary file.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must be valid.
 */
enum HinembedStatus hinembed_store_load(const char *path, struct HinembedStore **out);

/**
 * Write an embedding store to a binary file.
 *
 * # Safety
 * `store` must come from this library; `path` must be NUL-terminated.
 */
enum HinembedStatus hinembed_store_save(const struct HinembedStore *store, const char *path);

/**
 * Embedding dimension d; 0 for a null handle.
 *
 * # Safety
 * `store` must be null or a live handle from this library.
 */
uint64_t hinembed_store_dim(const struct HinembedStore *store);

/**
 * Number of entity rows; 0 for a null handle.
 *
 * # Safety
 * `store` must be null or a live handle from this library.
 */
uint64_t hinembed_store_num_entities(const struct HinembedStore *store);

/**
 * Copy one entity's embedding into `buf` (capacity `buf_len` doubles).
 *
 * # Safety
 * `buf` must point to at least `buf_len` writable f64 slots.
 */
enum HinembedStatus hinembed_store_entity_row(const struct HinembedStore *store,
                                              uint64_t entity_id,
                                              double *buf,
                                              uint64_t buf_len);

/**
 * Free a store handle. Null is a no-op.
 *
 * # Safety
 * `store` must be null or an unfreed handle from this library.
 */
void hinembed_store_free(struct HinembedStore *store);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* HINEMBED_H */
