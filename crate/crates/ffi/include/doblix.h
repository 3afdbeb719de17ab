#ifndef DOBLIX_H
#define DOBLIX_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DoblixStatus {
  DOBLIX_STATUS_OK = 0,
  DOBLIX_STATUS_NOT_FOUND = 1,
  DOBLIX_STATUS_CORRUPT_SSTABLE = 2,
  DOBLIX_STATUS_MODEL_DESERIALIZE_FAILURE = 3,
  DOBLIX_STATUS_IO_FAILURE = 4,
  DOBLIX_STATUS_CONFIG_INVALID = 5,
  /**
   * Null pointer or non-UTF-8 path.
   */
  DOBLIX_STATUS_INVALID_ARGUMENT = 6,
  /**
   * A Rust panic was caught at the boundary.
   */
  DOBLIX_STATUS_INTERNAL = 7,
} DoblixStatus;

/**
 * Opaque store handle.
 */
typedef struct DoblixDb DoblixDb;

typedef struct DoblixOptions {
  size_t memtable_bytes;
  /**
   * Run flushes and compactions on a worker thread.
   */
  bool background;
  /**
   * Let the tuning agent pick the index configuration of new tables.
   */
  bool enable_agent;
  bool sync_wal;
} DoblixOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

struct DoblixOptions doblix_options_default(void);

/**
 * Opens (or creates) the store in `dir`. `options` may be null for defaults.
 *
 * # Safety
 * `dir` is a NUL-terminated string; `options` is null or valid; `out` is writable.
 */
enum DoblixStatus doblix_open(const char *dir,
                              const struct DoblixOptions *options,
                              struct DoblixDb **out);

/**
 * Flushes background work and releases the handle. Null is a no-op.
 *
 * # Safety
 * `db` came from [`doblix_open`] and is not used afterwards.
 */
void doblix_close(struct DoblixDb *db);

/**
 * # Safety
 * `db` is a live handle; `key`/`value` point to `key_len`/`value_len` readable bytes.
 */
enum DoblixStatus doblix_put(const struct DoblixDb *db,
                             const uint8_t *key,
                             size_t key_len,
                             const uint8_t *value,
                             size_t value_len);

/**
 * On `DOBLIX_STATUS_OK` stores a fresh buffer in `*value`/`*value_len`;
 * release it with [`doblix_free_buf`]. A missing key yields
 * `DOBLIX_STATUS_NOT_FOUND`.
 *
 * # Safety
 * `db` is a live handle; `key` points to `key_len` bytes; `value` and `value_len` are writable.
 */
enum DoblixStatus doblix_get(const struct DoblixDb *db,
                             const uint8_t *key,
                             size_t key_len,
                             uint8_t **value,
                             size_t *value_len);

/**
 * # Safety
 * `db` is a live handle; `key` points to `key_len` readable bytes.
 */
enum DoblixStatus doblix_delete(const struct DoblixDb *db, const uint8_t *key, size_t key_len);

/**
 * Persists everything written so far into tables.
 *
 * # Safety
 * `db` is a live handle.
 */
enum DoblixStatus doblix_flush(const struct DoblixDb *db);

/**
 * Writes the JSON description of an SSTable file to `*json`; release it
 * with [`doblix_free_string`].
 *
 * # Safety
 * `path` is a NUL-terminated string; `json` is writable.
 */
enum DoblixStatus doblix_sst_inspect(const char *path, char **json);

/**
 * # Safety
 * `buf`/`len` came from [`doblix_get`] and are not freed twice.
 */
void doblix_free_buf(uint8_t *buf, size_t len);

/**
 * # Safety
 * `s` came from this library and is not freed twice.
 */
void doblix_free_string(char *s);

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *doblix_last_error(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DOBLIX_H */
