#ifndef TRANSIT_REID_H
#define TRANSIT_REID_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum TrStatus {
  TR_STATUS_OK = 0,
  TR_STATUS_NULL_ARGUMENT = 1,
  TR_STATUS_INVALID_UTF8 = 2,
  TR_STATUS_UNREADABLE_SOURCE = 3,
  TR_STATUS_UNWRITABLE_SINK = 4,
  TR_STATUS_MISSING_COLUMN = 5,
  TR_STATUS_INVALID_CONFIG = 6,
  TR_STATUS_INVALID_PARAMS = 7,
  TR_STATUS_UNKNOWN_CARD = 8,
  TR_STATUS_JSON = 9,
  TR_STATUS_INTERNAL = 10,
} TrStatus;

/**
 * Opaque handle to a loaded event store.
 */
typedef struct TrStore TrStore;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Load a CSV file or directory. Malformed rows are skipped; their count is
 * written to `malformed_rows` when it is not null.
 *
 * # Safety
 * `path` must be a valid C string; `out` must be writable.
 */
enum TrStatus tr_store_load_csv(const char *path, struct TrStore **out, uint64_t *malformed_rows);

/**
 * Generate a synthetic population from a JSON config.
 *
 * # Safety
 * `config_json` must be a valid C string; `out` must be writable.
 */
enum TrStatus tr_store_generate(const char *config_json, struct TrStore **out);

/**
 * Release a store handle. Null is ignored.
 *
 * # Safety
 * `store` must come from this library and not be used afterwards.
 */
void tr_store_free(struct TrStore *store);

/**
 * Number of cards in the store, 0 for a null handle.
 *
 * # Safety
 * `store` must be null or a live handle.
 */
uint64_t tr_store_card_count(const struct TrStore *store);

/**
 * Number of tap events in the store, 0 for a null handle.
 *
 * # Safety
 * `store` must be null or a live handle.
 */
uint64_t tr_store_event_count(const struct TrStore *store);

/**
 * Unicity report as CSV. `params_json` may be null for the defaults.
 *
 * # Safety
 * `store` must be live; `params_json` null or a valid C string; `out_csv` writable.
 */
enum TrStatus tr_unicity_csv(const struct TrStore *store, const char *params_json, char **out_csv);

/**
 * Evaluate a JSON constraint list; writes `{"total":..,"preview":[..]}`.
 *
 * # Safety
 * `store` must be live; `constraints_json` a valid C string; `out_json` writable.
 */
enum TrStatus tr_query_json(const struct TrStore *store,
                            const char *constraints_json,
                            uint32_t max_preview,
                            char **out_json);

/**
 * Co-travellers of `card_id` as JSON, over the whole store.
 *
 * # Safety
 * `store` must be live; `out_json` writable.
 */
enum TrStatus tr_cotravellers_json(const struct TrStore *store,
                                   uint64_t card_id,
                                   int64_t window_seconds,
                                   char **out_json);

/**
 * Message of the last failure on this thread, or null. Valid until the
 * next call into this library from the same thread.
 */
const char *tr_last_error_message(void);

/**
 * Release a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void tr_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TRANSIT_REID_H */
