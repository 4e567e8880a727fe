#ifndef FUZZYSEG_H
#define FUZZYSEG_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes returned by every fallible call.
typedef enum FsStatus {
  FS_STATUS_OK = 0,
  FS_STATUS_NULL_POINTER = 1,
  FS_STATUS_INVALID_ARGUMENT = 2,
  FS_STATUS_VALIDATION = 3,
  FS_STATUS_CONFIG = 4,
  FS_STATUS_NUMERICAL = 5,
  FS_STATUS_IO = 6,
  FS_STATUS_FORMAT = 7,
  FS_STATUS_STATE = 8,
  FS_STATUS_EVALUATION = 9,
  FS_STATUS_PANIC = 10,
} FsStatus;

// Training configuration handle.
typedef struct FsConfig FsConfig;

// Trained (teacher) parameters together with the configuration they came from.
typedef struct FsModel FsModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the last error message of this thread into `buf` (NUL-terminated,
// truncated to `len`). Returns the full message length in bytes.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
uintptr_t fs_last_error_message(char *buf, uintptr_t len);

// New configuration with default values.
struct FsConfig *fs_config_new(void);

// Parses a `key = value` configuration text into a new handle.
//
// # Safety
// `text` must be a NUL-terminated string; `out` must be writable.
enum FsStatus fs_config_parse(const char *text, struct FsConfig **out);

// Sets one configuration key.
//
// # Safety
// `config` must come from this library; `key` and `value` must be
// NUL-terminated strings.
enum FsStatus fs_config_set(struct FsConfig *config, const char *key, const char *value);

// Checks the configuration for consistency.
//
// # Safety
// `config` must come from this library.
enum FsStatus fs_config_validate(const struct FsConfig *config);

// # Safety
// `config` must be null or come from this library, and not be used afterwards.
void fs_config_free(struct FsConfig *config);

// Trains with `config` on its synthetic dataset and returns the teacher.
//
// # Safety
// `config` must come from this library; `out` must be writable.
enum FsStatus fs_train(const struct FsConfig *config, struct FsModel **out);

// Loads a checkpoint directory written by `fs_model_save` or the CLI.
//
// # Safety
// `dir` must be a NUL-terminated path; `out` must be writable.
enum FsStatus fs_model_load(const char *dir, struct FsModel **out);

// # Safety
// `model` must come from this library; `dir` must be a NUL-terminated path.
enum FsStatus fs_model_save(const struct FsModel *model, const char *dir);

// Number of classes the model predicts.
//
// # Safety
// `model` must be null or come from this library.
uintptr_t fs_model_num_classes(const struct FsModel *model);

// Class probabilities for `n` images of `h`×`w` RGB pixels in [0, 1],
// laid out N×3×H×W. `out_probs` receives N×C×H×W values.
//
// # Safety
// Pointers must be valid for the stated lengths.
enum FsStatus fs_model_predict(const struct FsModel *model,
                               const double *images,
                               uintptr_t n,
                               uintptr_t h,
                               uintptr_t w,
                               double *out_probs,
                               uintptr_t out_len);

// Evaluates the model on its configuration's evaluation scenes.
// `out_class_iou` may be null; otherwise it holds `classes` values.
//
// # Safety
// Pointers must be valid for the stated lengths.
enum FsStatus fs_model_evaluate(const struct FsModel *model,
                                double *out_miou,
                                double *out_class_iou,
                                uintptr_t classes);

// # Safety
// `model` must be null or come from this library, and not be used afterwards.
void fs_model_free(struct FsModel *model);

// Top-`k` fuzzy labels of an N×C×H×W probability map, written to `out`
// (same layout).
//
// # Safety
// `probs` and `out` must hold N·C·H·W values.
enum FsStatus fs_fuzzy_labels(const double *probs,
                              uintptr_t n,
                              uintptr_t c,
                              uintptr_t h,
                              uintptr_t w,
                              uintptr_t k,
                              double *out);

// Normalized entropy of an N×C×H×W probability map; `out` holds N·H·W values.
//
// # Safety
// `probs` must hold N·C·H·W values and `out` N·H·W values.
enum FsStatus fs_normalized_entropy(const double *probs,
                                    uintptr_t n,
                                    uintptr_t c,
                                    uintptr_t h,
                                    uintptr_t w,
                                    double *out);

// Entropy-derived pixel weights for `len` entropy values.
//
// # Safety
// `entropy` and `out` must hold `len` values.
enum FsStatus fs_pixel_weights(const double *entropy, uintptr_t len, double threshold, double *out);

// Median-frequency class weights from `classes` frequencies. A `cap` of
// zero or less disables clipping.
//
// # Safety
// `frequencies` and `out` must hold `classes` values.
enum FsStatus fs_class_weights(const double *frequencies,
                               uintptr_t classes,
                               double epsilon,
                               double cap,
                               double *out);

// Mean IoU of `len` predicted labels against ground truth; truth pixels
// equal to `ignore` are skipped. `out_class_iou` may be null.
//
// # Safety
// `pred` and `truth` must hold `len` values; `out_class_iou` null or `classes`.
enum FsStatus fs_miou(const uint32_t *pred,
                      const uint32_t *truth,
                      uintptr_t len,
                      uintptr_t classes,
                      uint32_t ignore,
                      double *out_miou,
                      double *out_class_iou);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FUZZYSEG_H */
