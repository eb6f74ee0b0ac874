#ifndef PATCHMASK_H
#define PATCHMASK_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Feature kinds for `pm_extract_features` and the masked pipeline.
 */
typedef enum PmFeatureKind {
  PM_FEATURE_KIND_LOGITS = 0,
  PM_FEATURE_KIND_CONFIDENCE = 1,
  PM_FEATURE_KIND_PREDICTION = 2,
} PmFeatureKind;

/**
 * Status codes returned by every call.
 */
typedef enum PmStatus {
  PM_STATUS_OK = 0,
  PM_STATUS_NULL_POINTER = 1,
  PM_STATUS_INVALID_ARGUMENT = 2,
  PM_STATUS_IO_ERROR = 3,
  PM_STATUS_FORMAT_ERROR = 4,
  PM_STATUS_CONTRACT_VIOLATION = 5,
} PmStatus;

/**
 * Opaque local-feature-tensor handle.
 */
typedef struct PmFeatures PmFeatures;

/**
 * Opaque model handle.
 */
typedef struct PmModel PmModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Loads a model checkpoint. On success writes a new handle to `out`; free it
 * with [`pm_model_free`].
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must be a valid pointer.
 */
enum PmStatus pm_model_load(const char *path, struct PmModel **out);

/**
 * Writes a model checkpoint.
 *
 * # Safety
 * `model` must be a live handle from this library; `path` NUL-terminated.
 */
enum PmStatus pm_model_save(const struct PmModel *model, const char *path);

/**
 * # Safety
 * `model` must be a handle returned by this library, not yet freed.
 */
void pm_model_free(struct PmModel *model);

/**
 * Model dimensions: image rows, cols, channels, and class count.
 *
 * # Safety
 * All pointers must be valid; `model` must be a live handle.
 */
enum PmStatus pm_model_dims(const struct PmModel *model,
                            size_t *rows,
                            size_t *cols,
                            size_t *channels,
                            size_t *classes);

/**
 * Extracts the local feature tensor of an image. `pixels` is row-major
 * (row, column, channel) in [0, 1] with exactly rows*cols*channels entries.
 *
 * # Safety
 * `model` must be a live handle; `pixels` must point to `len` doubles;
 * `out` must be valid. Free the result with [`pm_features_free`].
 */
enum PmStatus pm_extract_features(const struct PmModel *model,
                                  const double *pixels,
                                  size_t len,
                                  enum PmFeatureKind kind,
                                  struct PmFeatures **out);

/**
 * Feature tensor dimensions: grid rows, grid cols, classes.
 *
 * # Safety
 * All pointers must be valid; `features` must be a live handle.
 */
enum PmStatus pm_features_dims(const struct PmFeatures *features,
                               size_t *rows,
                               size_t *cols,
                               size_t *classes);

/**
 * Copies the feature values (row-major, class innermost) into `out`, which
 * must hold rows*cols*classes doubles.
 *
 * # Safety
 * `features` must be a live handle; `out` must point to `len` doubles.
 */
enum PmStatus pm_features_values(const struct PmFeatures *features, double *out, size_t len);

/**
 * # Safety
 * `features` must be a handle returned by this library, not yet freed.
 */
void pm_features_free(struct PmFeatures *features);

/**
 * Insecure baseline prediction (argmax of mean local logits).
 *
 * # Safety
 * As [`pm_extract_features`]; `out_class` must be valid.
 */
enum PmStatus pm_predict_insecure(const struct PmModel *model,
                                  const double *pixels,
                                  size_t len,
                                  size_t *out_class);

/**
 * Robust-masking prediction of an image under the defended pipeline.
 *
 * # Safety
 * As [`pm_extract_features`]; `out_class` must be valid.
 */
enum PmStatus pm_predict_masked(const struct PmModel *model,
                                const double *pixels,
                                size_t len,
                                enum PmFeatureKind kind,
                                double clip_lo,
                                double clip_hi,
                                double threshold,
                                size_t mask_rows,
                                size_t mask_cols,
                                size_t *out_class);

/**
 * Certifies that no in-model patch attack confined to one mask-shaped window
 * can change the masked prediction away from `true_label`. Writes 1 into
 * `out_certified` when certified, 0 otherwise.
 *
 * # Safety
 * As [`pm_predict_masked`]; `out_certified` must be valid.
 */
enum PmStatus pm_certify_masked(const struct PmModel *model,
                                const double *pixels,
                                size_t len,
                                size_t true_label,
                                enum PmFeatureKind kind,
                                double clip_lo,
                                double clip_hi,
                                double threshold,
                                size_t mask_rows,
                                size_t mask_cols,
                                uint8_t *out_certified);

/**
 * Worst-case count of feature cells per axis a patch of size `p` can corrupt
 * with receptive field `r` and stride `s` (all in pixels, all nonzero).
 */
size_t pm_window_size(size_t p, size_t r, size_t s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PATCHMASK_H */
