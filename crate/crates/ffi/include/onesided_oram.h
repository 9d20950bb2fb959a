#ifndef ONESIDED_ORAM_H
#define ONESIDED_ORAM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define OSORAM_OK 0

#define OSORAM_ERR_NULL 1

#define OSORAM_ERR_CONFIG 2

#define OSORAM_ERR_ARGUMENT 3

#define OSORAM_ERR_STASH_OVERFLOW 4

#define OSORAM_ERR_TAMPER 5

#define OSORAM_ERR_TRANSPORT 6

#define OSORAM_ERR_BUFFER_TOO_SMALL 7

#define OSORAM_ERR_INTERNAL 8

#define OSORAM_ERR_PANIC 9

#define OSORAM_PROFILE_IB40 0

#define OSORAM_PROFILE_IB100 1

/**
 * Opaque client handle.
 */
typedef struct OsoramHandle OsoramHandle;

/**
 * Client parameters. Fill with `osoram_config_default` first.
 */
typedef struct OsoramConfig {
  uint64_t block_count;
  uint32_t bucket_capacity;
  uint32_t value_bytes;
  uint32_t stash_max;
  /**
   * Percentage of gets that run the full ORAM protocol.
   */
  double oram_fraction;
  uint64_t seed;
  /**
   * `OSORAM_PROFILE_IB40` or `OSORAM_PROFILE_IB100`.
   */
  uint32_t profile;
} OsoramConfig;

typedef struct OsoramMetrics {
  uint64_t puts;
  uint64_t oram_reads;
  uint64_t one_sided_reads;
  uint64_t stash_reads;
  uint64_t absent_reads;
  uint64_t max_stash;
  uint64_t verbs;
  uint64_t bytes;
  double virtual_time_us;
} OsoramMetrics;

typedef struct OsoramCost {
  double oram_access_us;
  double one_sided_us;
  double mean_read_us;
  double speedup;
} OsoramCost;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or NULL. Owned by the
 * library; valid until the next failing call on this thread.
 */
const char *osoram_last_error(void);

/**
 * # Safety
 * `out` must be null or point to writable memory for one `OsoramConfig`.
 */
int32_t osoram_config_default(struct OsoramConfig *out);

/**
 * Creates a client over a freshly formatted simulated region.
 *
 * # Safety
 * `config` must point to a valid `OsoramConfig`; `out` to writable storage
 * for one pointer. Release the handle with `osoram_free`.
 */
int32_t osoram_new(const struct OsoramConfig *config, struct OsoramHandle **out);

/**
 * # Safety
 * `handle` must be null or a pointer from `osoram_new` not yet freed.
 */
void osoram_free(struct OsoramHandle *handle);

/**
 * Stores `len` bytes under `key`; `len` may not exceed the configured
 * value size.
 *
 * # Safety
 * `handle` must be live; `value` must point to `len` readable bytes
 * (it may be null when `len` is 0).
 */
int32_t osoram_put(struct OsoramHandle *handle, uint64_t key, const uint8_t *value, size_t len);

/**
 * Reads `key`, routed by the configured mix. Sets `*out_found`, and the
 * value length in `*out_len` even when `cap` is too small.
 *
 * # Safety
 * `handle` must be live; `buf` must have `cap` writable bytes; `out_len`
 * and `out_found` must be writable.
 */
int32_t osoram_get(struct OsoramHandle *handle,
                   uint64_t key,
                   uint8_t *buf,
                   size_t cap,
                   size_t *out_len,
                   bool *out_found);

/**
 * As `osoram_get`, always through the full ORAM protocol.
 *
 * # Safety
 * As for `osoram_get`.
 */
int32_t osoram_oram_get(struct OsoramHandle *handle,
                        uint64_t key,
                        uint8_t *buf,
                        size_t cap,
                        size_t *out_len,
                        bool *out_found);

/**
 * As `osoram_get`, always by a single one-sided read.
 *
 * # Safety
 * As for `osoram_get`.
 */
int32_t osoram_one_sided_get(struct OsoramHandle *handle,
                             uint64_t key,
                             uint8_t *buf,
                             size_t cap,
                             size_t *out_len,
                             bool *out_found);

/**
 * # Safety
 * `handle` must be live; `out` writable.
 */
int32_t osoram_metrics(const struct OsoramHandle *handle, struct OsoramMetrics *out);

/**
 * Analytic per-read cost at `x_percent` ORAM reads for the tree that
 * `config` describes.
 *
 * # Safety
 * `config` must point to a valid `OsoramConfig`; `out` writable.
 */
int32_t osoram_cost_model(const struct OsoramConfig *config,
                          double x_percent,
                          struct OsoramCost *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ONESIDED_ORAM_H */
