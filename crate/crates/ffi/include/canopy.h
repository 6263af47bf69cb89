#ifndef CANOPY_H
#define CANOPY_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every call. Values 2–4 match the command-line exit codes.
 */
typedef enum CanopyStatus {
  CANOPY_STATUS_OK = 0,
  CANOPY_STATUS_NULL_POINTER = 1,
  CANOPY_STATUS_CONFIG_ERROR = 2,
  CANOPY_STATUS_DATA_ERROR = 3,
  CANOPY_STATUS_NUMERICAL_ERROR = 4,
  CANOPY_STATUS_PANIC = 5,
} CanopyStatus;

/**
 * Loaded segmentation model with its input normalization, if any.
 */
typedef struct CanopyModel CanopyModel;

typedef struct CanopyConfusion {
  uint64_t tp;
  uint64_t fp;
  uint64_t tn;
  uint64_t fn_;
} CanopyConfusion;

typedef struct CanopyMetrics {
  double accuracy;
  double precision;
  double recall;
  double f1;
  /**
   * Non-zero when some ratio had a zero denominator and was reported as 0.
   */
  uint8_t degenerate;
} CanopyMetrics;

typedef struct CanopyChangeCounts {
  uint64_t stable_forest;
  uint64_t stable_nonforest;
  uint64_t deforested;
  uint64_t afforested;
} CanopyChangeCounts;

typedef struct CanopyArea {
  double deforested_km2;
  double afforested_km2;
  double forest_t0_km2;
  /**
   * Valid only when `rate_defined` is non-zero.
   */
  double deforestation_rate;
  uint8_t rate_defined;
} CanopyArea;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next call into the library from this thread.
 */
const char *canopy_last_error(void);

/**
 * Load a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum CanopyStatus canopy_model_load(const char *path, struct CanopyModel **out);

/**
 * Build a freshly initialized model. `arch` is one of `unet`,
 * `attention_unet`, `segnet_resnet50`, `fcn32_vgg16`.
 *
 * # Safety
 * `arch` must be a NUL-terminated string and `out` a writable pointer.
 */
enum CanopyStatus canopy_model_build(const char *arch,
                                     size_t in_channels,
                                     size_t base_width,
                                     size_t depth,
                                     uint64_t seed,
                                     struct CanopyModel **out);

/**
 * Release a model handle; null is ignored.
 *
 * # Safety
 * `model` must be null or a handle from this library not yet freed.
 */
void canopy_model_free(struct CanopyModel *model);

/**
 * Input channel count of a model, 0 for null.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t canopy_model_in_channels(const struct CanopyModel *model);

/**
 * Height and width must be multiples of this.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t canopy_model_size_divisor(const struct CanopyModel *model);

/**
 * Forest probabilities for `n` images stored N×H×W×C (row-major,
 * channels last). With `normalize` non-zero the checkpoint's percentile
 * normalization is applied first. Writes N×H×W values to `out`.
 *
 * # Safety
 * `input` must hold `n*h*w*c` values and `out` room for `n*h*w`.
 */
enum CanopyStatus canopy_model_predict(const struct CanopyModel *model,
                                       const double *input,
                                       size_t n,
                                       size_t h,
                                       size_t w,
                                       size_t c,
                                       uint8_t normalize,
                                       double *out);

/**
 * Confusion counts of binary label arrays (forest = 1 is positive).
 *
 * # Safety
 * `pred` and `target` must hold `len` values; `out` must be writable.
 */
enum CanopyStatus canopy_confusion(const uint8_t *pred,
                                   const uint8_t *target,
                                   size_t len,
                                   struct CanopyConfusion *out);

/**
 * Accuracy, precision, recall and F1 from counts.
 *
 * # Safety
 * `counts` must be readable and `out` writable.
 */
enum CanopyStatus canopy_metrics(const struct CanopyConfusion *counts, struct CanopyMetrics *out);

/**
 * Area under the precision–recall curve over `n_thresholds` uniform thresholds.
 *
 * # Safety
 * `probs` and `target` must hold `len` values; `out` must be writable.
 */
enum CanopyStatus canopy_auc_pr(const double *probs,
                                const uint8_t *target,
                                size_t len,
                                size_t n_thresholds,
                                double *out);

/**
 * Per-pixel change states (0 stable forest, 1 stable non-forest,
 * 2 deforested, 3 afforested) and their counts. `states` may be null.
 *
 * # Safety
 * `t0` and `t1` must hold `len` values; `states`, if not null, room for
 * `len`; `counts` must be writable.
 */
enum CanopyStatus canopy_detect_change(const uint8_t *t0,
                                       const uint8_t *t1,
                                       size_t len,
                                       uint8_t *states,
                                       struct CanopyChangeCounts *counts);

/**
 * Areas in km² for change counts at a ground resolution in metres.
 *
 * # Safety
 * `counts` must be readable and `out` writable.
 */
enum CanopyStatus canopy_area_estimate(const struct CanopyChangeCounts *counts,
                                       double pixel_size_m,
                                       struct CanopyArea *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CANOPY_H */
