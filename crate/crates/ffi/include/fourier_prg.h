#ifndef FOURIER_PRG_H
#define FOURIER_PRG_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible call.
 */
typedef enum FprgStatus {
  FPRG_STATUS_OK = 0,
  FPRG_STATUS_NULL_POINTER = 1,
  FPRG_STATUS_USAGE = 2,
  FPRG_STATUS_SEED_LENGTH = 3,
  FPRG_STATUS_REFUSED = 4,
  FPRG_STATUS_BUFFER_TOO_SMALL = 5,
  FPRG_STATUS_INVALID_UTF8 = 6,
  FPRG_STATUS_JSON = 7,
  FPRG_STATUS_IO = 8,
  FPRG_STATUS_PANIC = 9,
} FprgStatus;

/**
 * Opaque generator handle.
 */
typedef struct FprgGenerator FprgGenerator;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Builds the composed generator over [m]^n with error `eps` and default knobs.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for a handle.
 */
enum FprgStatus fprg_generator_new(uint64_t m, size_t n, double eps, struct FprgGenerator **out);

/**
 * As `fprg_generator_new`, with knobs given as `key = value` lines.
 * A null `config` means default knobs.
 *
 * # Safety
 * `config` must be null or a NUL-terminated string; `out` must be writable.
 */
enum FprgStatus fprg_generator_new_with_config(uint64_t m,
                                               size_t n,
                                               double eps,
                                               const char *config,
                                               struct FprgGenerator **out);

/**
 * Loads a generator from its plan JSON.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum FprgStatus fprg_generator_from_json(const char *json, struct FprgGenerator **out);

/**
 * Releases a handle; null is ignored.
 *
 * # Safety
 * `g` must be null or a handle from this library that has not been freed.
 */
void fprg_generator_free(struct FprgGenerator *g);

/**
 * Seed length in bits.
 *
 * # Safety
 * `g` must be a live handle and `out` writable.
 */
enum FprgStatus fprg_generator_seed_bits(const struct FprgGenerator *g, size_t *out);

/**
 * Output length n and alphabet size m.
 *
 * # Safety
 * `g` must be a live handle; `n` and `m` must be writable.
 */
enum FprgStatus fprg_generator_shape(const struct FprgGenerator *g, size_t *n, uint64_t *m);

/**
 * Expands a seed into `n` symbols. The seed is the first `seed_bits` bits
 * of `seed`, most significant bit of byte 0 first; `seed_len` must be
 * exactly ceil(seed_bits / 8) bytes.
 *
 * # Safety
 * `g` must be a live handle, `seed` readable for `seed_len` bytes and
 * `out` writable for `out_len` symbols.
 */
enum FprgStatus fprg_generator_generate(const struct FprgGenerator *g,
                                        const uint8_t *seed,
                                        size_t seed_len,
                                        uint64_t *out,
                                        size_t out_len);

/**
 * Plan JSON as a newly allocated string; release it with `fprg_string_free`.
 *
 * # Safety
 * `g` must be a live handle and `out` writable.
 */
enum FprgStatus fprg_generator_to_json(const struct FprgGenerator *g, char **out);

/**
 * Releases a string returned by this library; null is ignored.
 *
 * # Safety
 * `s` must be null or a string from this library that has not been freed.
 */
void fprg_string_free(char *s);

/**
 * Message of the last failure on this thread, or an empty string. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *fprg_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *fprg_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FOURIER_PRG_H */
