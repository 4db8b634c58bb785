#ifndef MICROINPAINT_H
#define MICROINPAINT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum {
  MI_STATUS_OK = 0,
  MI_STATUS_NULL_ARGUMENT = 1,
  MI_STATUS_INVALID_UTF8 = 2,
  MI_STATUS_IO = 3,
  MI_STATUS_DECODE = 4,
  MI_STATUS_INVALID_IMAGE = 5,
  MI_STATUS_INVALID_REGION = 6,
  MI_STATUS_SHAPE = 7,
  MI_STATUS_NO_VALID_PATCH = 8,
  MI_STATUS_CONFIG = 9,
  MI_STATUS_BUNDLE = 10,
  MI_STATUS_INTERNAL = 11,
  MI_STATUS_PANIC = 12,
} MiStatus;

/**
 * Image type override for decoding.
 */
typedef enum {
  MI_KIND_AUTO = 0,
  MI_KIND_N_PHASE = 1,
  MI_KIND_GRAYSCALE = 2,
  MI_KIND_COLOUR = 3,
} MiKind;

typedef enum {
  MI_METHOD_GOPT = 0,
  MI_METHOD_WGAN = 1,
} MiMethod;

/**
 * A trained model bundle.
 */
typedef struct MiBundle MiBundle;

/**
 * A decoded micrograph.
 */
typedef struct MiMicrograph MiMicrograph;

/**
 * Training progress callback: iteration, critic loss and the user pointer.
 * Returning non-zero stops training; the bundle is then marked partial.
 */
typedef int (*MiProgressFn)(size_t iteration, double critic_loss, void *user);

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *mi_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *mi_version(void);

/**
 * Load a PNG, TIFF or JPEG micrograph from `path`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
MiStatus mi_micrograph_load(const char *path, MiKind kind, MiMicrograph **out);

/**
 * Decode an in-memory image.
 *
 * # Safety
 * `bytes` must point to `len` readable bytes and `out` be a valid pointer.
 */
MiStatus mi_micrograph_decode(const uint8_t *bytes, size_t len, MiKind kind, MiMicrograph **out);

/**
 * # Safety
 * `m` must be null or a handle from this library not yet freed.
 */
void mi_micrograph_free(MiMicrograph *m);

/**
 * Width, height and channel count (phases for n-phase images).
 *
 * # Safety
 * `m` must be a live handle; output pointers may be null.
 */
MiStatus mi_micrograph_dims(const MiMicrograph *m, size_t *width, size_t *height, size_t *channels);

/**
 * Number of phases of an n-phase image, 0 otherwise.
 *
 * # Safety
 * `m` must be a live handle.
 */
size_t mi_micrograph_phases(const MiMicrograph *m);

/**
 * Write the image as PNG.
 *
 * # Safety
 * `m` must be a live handle and `path` a NUL-terminated string.
 */
MiStatus mi_micrograph_save_png(const MiMicrograph *m, const char *path);

/**
 * Encode the image as PNG into a buffer released with [`mi_buffer_free`].
 *
 * # Safety
 * `m` must be a live handle; `data` and `len` valid pointers.
 */
MiStatus mi_micrograph_encode_png(const MiMicrograph *m, uint8_t **data, size_t *len);

/**
 * # Safety
 * `data`/`len` must come from [`mi_micrograph_encode_png`], or `data` be null.
 */
void mi_buffer_free(uint8_t *data, size_t len);

/**
 * Train a bundle on `image`.
 *
 * `region_json` describes the occluded region (required for `Gopt`,
 * optional for `Wgan`), e.g. `{"shape":"rect","x":8,"y":8,"w":32,"h":32}`.
 * `config_json` may hold `training` and `arch` objects overriding the
 * defaults; null keeps them. Training is deterministic in `seed`.
 *
 * # Safety
 * Handles and strings must be valid; `out` a valid pointer. `progress` is
 * called on the calling thread.
 */
MiStatus mi_train(const MiMicrograph *image,
                  MiMethod method,
                  const char *region_json,
                  const char *config_json,
                  uint64_t seed,
                  MiProgressFn progress,
                  void *user,
                  MiBundle **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
MiStatus mi_bundle_load(const char *path, MiBundle **out);

/**
 * # Safety
 * `b` must be a live handle and `path` a NUL-terminated string.
 */
MiStatus mi_bundle_save(const MiBundle *b, const char *path);

/**
 * # Safety
 * `b` must be null or a handle from this library not yet freed.
 */
void mi_bundle_free(MiBundle *b);

/**
 * Method, completed iterations and whether training stopped early.
 *
 * # Safety
 * `b` must be a live handle; output pointers may be null.
 */
MiStatus mi_bundle_info(const MiBundle *b, MiMethod *method, size_t *iterations, bool *partial);

/**
 * Hex SHA-256 of the serialised bundle (64 characters plus NUL).
 *
 * # Safety
 * `b` must be a live handle, `buf` writable for `len` bytes; `needed` may be null.
 */
MiStatus mi_bundle_digest(const MiBundle *b, char *buf, size_t len, size_t *needed);

/**
 * Inpaint `image` with a G-opt bundle. With `resample` false the bundle's
 * fixed seed is used; otherwise its centre is redrawn from `rng_seed`.
 *
 * # Safety
 * Handles must be live and `out` a valid pointer.
 */
MiStatus mi_inpaint(const MiBundle *b,
                    const MiMicrograph *image,
                    bool resample,
                    uint64_t rng_seed,
                    MiMicrograph **out);

/**
 * Two-sample KS test of squared neighbour differences across the region
 * border of `inpainted` against those of `original`.
 *
 * # Safety
 * Handles must be live, `region_json` NUL-terminated; outputs may be null.
 */
MiStatus mi_border_contiguity(const MiMicrograph *inpainted,
                              const MiMicrograph *original,
                              const char *region_json,
                              double *p_value,
                              double *statistic);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MICROINPAINT_H */
