#ifndef CXRAY_H
#define CXRAY_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Freeze policy codes for [`CxModelSpec::freeze`].
 */
#define CX_FREEZE_NONE 0

#define CX_FREEZE_OFF_THE_SHELF 1

#define CX_FREEZE_FINE_TUNE 2

/**
 * Number of outputs of every classifier.
 */
#define CX_NUM_LABELS 15

typedef enum CxStatus {
  CX_OK = 0,
  CX_ERR_NULL_POINTER = 1,
  CX_ERR_USAGE = 2,
  CX_ERR_SHAPE = 3,
  CX_ERR_VALIDATION = 4,
  CX_ERR_NUMERIC = 5,
  CX_ERR_IO = 6,
  CX_ERR_FORMAT = 7,
  CX_ERR_INTEGRITY = 8,
  CX_ERR_STATE = 9,
  CX_ERR_UNDEFINED = 10,
  CX_ERR_BUFFER_TOO_SMALL = 11,
  CX_ERR_PANIC = 12,
} CxStatus;

/**
 * Opaque model handle.
 */
typedef struct CxModel CxModel;

/**
 * Plain description of a ResNet classifier.
 */
typedef struct CxModelSpec {
  /**
   * 38, 50 or 101.
   */
  uint32_t depth;
  /**
   * 1 or 3.
   */
  uint32_t input_channels;
  uint32_t input_size;
  uint8_t extra_pool;
  uint8_t use_meta;
  /**
   * One of the `CX_FREEZE_*` codes.
   */
  uint32_t freeze;
  /**
   * 1 for the published widths.
   */
  uint32_t width_divisor;
} CxModelSpec;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call on the same thread.
 */
const char *cx_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *cx_version(void);

/**
 * Builds a freshly initialized classifier.
 *
 * # Safety
 * `spec` must point to a valid spec and `out` to writable storage.
 */
enum CxStatus cx_model_build(const struct CxModelSpec *spec, uint64_t seed, struct CxModel **out);

/**
 * Loads a checkpoint manifest (with its `.bin` blob beside it).
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum CxStatus cx_model_load(const char *path, struct CxModel **out);

/**
 * # Safety
 * `model` must come from this library; `path` must be NUL-terminated.
 */
enum CxStatus cx_model_save(const struct CxModel *model, const char *path);

/**
 * Releases a handle; null is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void cx_model_free(struct CxModel *model);

/**
 * Writes the layout of an image classifier to `out`.
 *
 * # Safety
 * `model` must come from this library and `out` be writable.
 */
enum CxStatus cx_model_spec(const struct CxModel *model, struct CxModelSpec *out);

/**
 * Sigmoid outputs for `n` images laid out `[n, C, S, S]`; `meta` is
 * `[n, 3]` (scaled age, gender, view) for metadata models and null
 * otherwise. `out` receives `[n, 15]`.
 *
 * # Safety
 * Buffers must hold the stated number of elements.
 */
enum CxStatus cx_model_predict(const struct CxModel *model,
                               const float *images,
                               size_t n,
                               const float *meta,
                               float *out);

/**
 * Area under the ROC curve of `scores` against 0/1 `labels`.
 *
 * # Safety
 * Both arrays must hold `n` elements; `out` must be writable.
 */
enum CxStatus cx_roc_auc(const double *scores, const uint8_t *labels, size_t n, double *out);

/**
 * Spearman rank correlation of two length-`n` vectors.
 *
 * # Safety
 * Both arrays must hold `n` elements; `out` must be writable.
 */
enum CxStatus cx_spearman(const double *a, const double *b, size_t n, double *out);

/**
 * Grad-CAM of `label` for one image `[C, S, S]`. The raw grid is written
 * row-major to `grid` (capacity `grid_capacity`) with its dimensions in
 * `grid_height`/`grid_width`; `rendering`, when non-null, receives the
 * normalized `S x S` map.
 *
 * # Safety
 * Buffers must hold the stated number of elements.
 */
enum CxStatus cx_grad_cam(const struct CxModel *model,
                          const float *image,
                          const float *meta,
                          size_t label,
                          float *grid,
                          size_t grid_capacity,
                          size_t *grid_height,
                          size_t *grid_width,
                          float *rendering);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CXRAY_H */
