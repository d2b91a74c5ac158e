#ifndef DEFECT_FORGE_H
#define DEFECT_FORGE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum DfStatus {
  DF_STATUS_OK = 0,
  /**
   * A required pointer was null or a string was not UTF-8.
   */
  DF_STATUS_NULL_ARGUMENT = 1,
  DF_STATUS_INVALID_ARGUMENT = 2,
  DF_STATUS_IO = 3,
  DF_STATUS_CHECKPOINT = 4,
  DF_STATUS_CONFIG = 5,
  DF_STATUS_IMAGE = 6,
  /**
   * A Rust panic was caught at the boundary.
   */
  DF_STATUS_INTERNAL = 7,
} DfStatus;

/**
 * The outcome of one inspection.
 */
typedef struct DfInspection DfInspection;

/**
 * A loaded pipeline.
 */
typedef struct DfPipeline DfPipeline;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *df_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *df_version(void);

/**
 * Load a checkpoint written by `defect-forge train`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum DfStatus df_pipeline_load(const char *path, struct DfPipeline **out);

/**
 * An untrained pipeline built from `key = value` config text; null `config`
 * means the defaults. Useful for wiring tests.
 *
 * # Safety
 * `config` must be null or NUL-terminated; `out` must be valid.
 */
enum DfStatus df_pipeline_new(const char *config, struct DfPipeline **out);

/**
 * # Safety
 * `pipeline` must come from `df_pipeline_load`/`df_pipeline_new` and not
 * have been freed. Null is ignored.
 */
void df_pipeline_free(struct DfPipeline *pipeline);

/**
 * Inspect an interleaved 8-bit RGB buffer of `width * height * 3` bytes.
 *
 * # Safety
 * `rgb` must point to at least `len` readable bytes; `out` must be valid.
 */
enum DfStatus df_inspect_rgb(const struct DfPipeline *pipeline,
                             const uint8_t *rgb,
                             size_t len,
                             uint32_t width,
                             uint32_t height,
                             bool skip_stage1,
                             struct DfInspection **out);

/**
 * Inspect an image file (PNG).
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must be valid.
 */
enum DfStatus df_inspect_file(const struct DfPipeline *pipeline,
                              const char *path,
                              bool skip_stage1,
                              struct DfInspection **out);

/**
 * Image width of the inspected image, or 0 for null.
 *
 * # Safety
 * `r` must be null or a live inspection handle.
 */
uint32_t df_inspection_width(const struct DfInspection *r);

/**
 * # Safety
 * `r` must be null or a live inspection handle.
 */
uint32_t df_inspection_height(const struct DfInspection *r);

/**
 * Number of patches stage 1 passed on to stage 2.
 *
 * # Safety
 * `r` must be null or a live inspection handle.
 */
size_t df_inspection_selected_count(const struct DfInspection *r);

/**
 * Number of patches the image was sliced into.
 *
 * # Safety
 * `r` must be null or a live inspection handle.
 */
size_t df_inspection_patch_count(const struct DfInspection *r);

/**
 * # Safety
 * `r` must be null or a live inspection handle.
 */
size_t df_inspection_defect_pixels(const struct DfInspection *r);

/**
 * Copy the row-major defect mask (1 = defect) into `buf`, which must hold
 * exactly `width * height` bytes.
 *
 * # Safety
 * `r` must be a live inspection handle; `buf` must be writable for `len`
 * bytes.
 */
enum DfStatus df_inspection_mask(const struct DfInspection *r, uint8_t *buf, size_t len);

/**
 * The full result as JSON. Release it with [`df_string_free`].
 *
 * # Safety
 * `r` must be a live inspection handle; `out` must be valid.
 */
enum DfStatus df_inspection_json(const struct DfInspection *r, char **out);

/**
 * # Safety
 * `r` must be null or come from an inspect call and not have been freed.
 */
void df_inspection_free(struct DfInspection *r);

/**
 * # Safety
 * `s` must be null or a string returned by this library.
 */
void df_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DEFECT_FORGE_H */
