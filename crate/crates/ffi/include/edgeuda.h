#ifndef EDGEUDA_H
#define EDGEUDA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum EuStatus {
  EU_STATUS_OK = 0,
  EU_STATUS_NULL_POINTER = 1,
  EU_STATUS_INVALID_ARGUMENT = 2,
  EU_STATUS_CONFIG = 3,
  EU_STATUS_IO = 4,
  EU_STATUS_DATASET = 5,
  EU_STATUS_SHAPE = 6,
  EU_STATUS_NUMERIC = 7,
  EU_STATUS_DOMAIN = 8,
  EU_STATUS_INPUT_SIZE = 9,
  EU_STATUS_PROTOCOL = 10,
  EU_STATUS_CHECKPOINT = 11,
  EU_STATUS_NO_CLASSES_PRESENT = 12,
  EU_STATUS_PANIC = 13,
} EuStatus;

/**
 * Opaque confusion matrix accumulator.
 */
typedef struct EuConfusion EuConfusion;

/**
 * Opaque segmentation model.
 */
typedef struct EuModel EuModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *eu_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *eu_version(void);

/**
 * Label used for unscored pixels.
 */
uint8_t eu_ignore_label(void);

/**
 * Creates a freshly initialised model with the default architecture for
 * `num_classes` classes and `depth_bins` depth bins over `[1, 666.36]` m.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum EuStatus eu_model_new(size_t num_classes,
                           size_t depth_bins,
                           uint64_t seed,
                           struct EuModel **out);

/**
 * Loads a checkpoint written by `edgeuda train`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum EuStatus eu_model_load(const char *path, struct EuModel **out);

/**
 * Writes the model as a checkpoint.
 *
 * # Safety
 * `model` must come from this library; `path` must be NUL-terminated.
 */
enum EuStatus eu_model_save(const struct EuModel *model, const char *path);

/**
 * Releases a model. NULL is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void eu_model_free(struct EuModel *model);

/**
 * Number of semantic classes, or 0 for NULL.
 *
 * # Safety
 * `model` must be NULL or come from this library.
 */
size_t eu_model_num_classes(const struct EuModel *model);

/**
 * Number of learnable generator parameters, or 0 for NULL.
 *
 * # Safety
 * `model` must be NULL or come from this library.
 */
size_t eu_model_param_count(const struct EuModel *model);

/**
 * Segments one image. `labels_out` receives `H×W` refined-head labels.
 * `entropy_out` (total refined entropy per pixel), `edge_out` (edge
 * probability) and `depth_out` (metres) are optional `H×W` buffers.
 *
 * # Safety
 * `rgb` must hold `height·width·3` doubles; each non-NULL output must hold
 * `height·width` elements.
 */
enum EuStatus eu_model_predict(const struct EuModel *model,
                               const double *rgb,
                               size_t height,
                               size_t width,
                               uint8_t *labels_out,
                               double *entropy_out,
                               double *edge_out,
                               double *depth_out);

/**
 * Creates an empty `num_classes × num_classes` confusion matrix.
 *
 * # Safety
 * `out` must be writable.
 */
enum EuStatus eu_confusion_new(size_t num_classes, struct EuConfusion **out);

/**
 * Accumulates `len` pixels; ground-truth pixels equal to the ignore label
 * are skipped.
 *
 * # Safety
 * `cm` must come from this library; `pred` and `gt` must hold `len` bytes.
 */
enum EuStatus eu_confusion_add(struct EuConfusion *cm,
                               const uint8_t *pred,
                               const uint8_t *gt,
                               size_t len);

/**
 * Count for ground truth `gt` predicted as `pred`; 0 for NULL or out of range.
 *
 * # Safety
 * `cm` must be NULL or come from this library.
 */
uint64_t eu_confusion_get(const struct EuConfusion *cm, size_t gt, size_t pred);

/**
 * Mean IoU over present classes. `per_class_out` (optional) receives one
 * IoU per class, NaN for absent classes.
 *
 * # Safety
 * `cm` must come from this library; `miou_out` must be writable;
 * `per_class_out`, if non-NULL, must hold `num_classes` doubles.
 */
enum EuStatus eu_confusion_miou(const struct EuConfusion *cm,
                                double *miou_out,
                                double *per_class_out);

/**
 * Releases a confusion matrix. NULL is ignored.
 *
 * # Safety
 * `cm` must come from this library and not be used afterwards.
 */
void eu_confusion_free(struct EuConfusion *cm);

/**
 * Canny edges of a grayscale image into `out` as `{0, 255}`.
 *
 * # Safety
 * `gray` and `out` must hold `height·width` elements.
 */
enum EuStatus eu_canny(const double *gray,
                       size_t height,
                       size_t width,
                       double sigma,
                       double low,
                       double high,
                       uint8_t *out);

/**
 * 4-neighbour label boundary into `out` as `{0, 255}`.
 *
 * # Safety
 * `labels` and `out` must hold `height·width` bytes.
 */
enum EuStatus eu_boundary_oracle(const uint8_t *labels, size_t height, size_t width, uint8_t *out);

/**
 * Union of per-class Canny edges with default parameters.
 *
 * # Safety
 * `labels` and `out` must hold `height·width` bytes.
 */
enum EuStatus eu_edge_ground_truth(const uint8_t *labels,
                                   size_t height,
                                   size_t width,
                                   size_t num_classes,
                                   uint8_t *out);

/**
 * Per-channel `-p ln p` of a channel-major `C×H×W` probability map.
 *
 * # Safety
 * `probs` and `out` must hold `channels·height·width` doubles.
 */
enum EuStatus eu_entropy_map(const double *probs,
                             size_t channels,
                             size_t height,
                             size_t width,
                             double *out);

/**
 * Renders scene `index` of the default generator with `seed`, sized
 * `height × width`. Outputs are `H×W×3` image, `H×W` labels and depth;
 * any output may be NULL.
 *
 * # Safety
 * Non-NULL outputs must have the sizes above.
 */
enum EuStatus eu_generate_scene(uint64_t seed,
                                uint64_t index,
                                size_t height,
                                size_t width,
                                size_t num_classes,
                                double *rgb_out,
                                uint8_t *labels_out,
                                double *depth_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EDGEUDA_H */
