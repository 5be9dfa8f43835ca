#ifndef CONTEXTVAE_H
#define CONTEXTVAE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum CvaeStatus {
  CVAE_STATUS_OK = 0,
  CVAE_STATUS_OTHER = 1,
  CVAE_STATUS_CONFIG = 2,
  CVAE_STATUS_DATA = 3,
  CVAE_STATUS_NUMERICAL = 4,
  CVAE_STATUS_NULL_POINTER = 5,
  CVAE_STATUS_PANIC = 6,
} CvaeStatus;

/**
 * Observation windows with their future ground truth.
 */
typedef struct CvaeDataset CvaeDataset;

/**
 * Trained model loaded from a checkpoint.
 */
typedef struct CvaeModel CvaeModel;

/**
 * Sampled futures of one window.
 */
typedef struct CvaePredictions CvaePredictions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty if none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *cvae_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *cvae_version(void);

/**
 * Loads the model stored in a training checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum CvaeStatus cvae_model_load(const char *path, struct CvaeModel **out);

/**
 * # Safety
 * `model` must come from [`cvae_model_load`] or be null.
 */
void cvae_model_free(struct CvaeModel *model);

/**
 * Windows of `t` observed and `horizon` future frames from a scene file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum CvaeStatus cvae_dataset_load(const char *path,
                                  size_t t,
                                  size_t horizon,
                                  double radius,
                                  size_t downsample,
                                  struct CvaeDataset **out);

/**
 * Number of windows; 0 for a null handle.
 *
 * # Safety
 * `dataset` must come from [`cvae_dataset_load`] or be null.
 */
size_t cvae_dataset_len(const struct CvaeDataset *dataset);

/**
 * Copies the observed (`observed = 1`) or future (`observed = 0`) world
 * positions of window `index` into `out_xy`, and their count into `out_len`.
 *
 * # Safety
 * `out_xy` must hold `capacity` doubles; `out_len` must be writable.
 */
enum CvaeStatus cvae_dataset_positions(const struct CvaeDataset *dataset,
                                       size_t index,
                                       int32_t observed,
                                       double *out_xy,
                                       size_t capacity,
                                       size_t *out_len);

/**
 * # Safety
 * `dataset` must come from [`cvae_dataset_load`] or be null.
 */
void cvae_dataset_free(struct CvaeDataset *dataset);

/**
 * Samples `k` futures of `horizon` steps for window `index`.
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum CvaeStatus cvae_predict(const struct CvaeModel *model,
                             const struct CvaeDataset *dataset,
                             size_t index,
                             size_t k,
                             size_t horizon,
                             uint64_t seed,
                             struct CvaePredictions **out);

/**
 * # Safety
 * `p` must come from [`cvae_predict`] or be null.
 */
size_t cvae_predictions_k(const struct CvaePredictions *p);

/**
 * # Safety
 * `p` must come from [`cvae_predict`] or be null.
 */
size_t cvae_predictions_horizon(const struct CvaePredictions *p);

/**
 * Copies all trajectories as `k × horizon × 2` doubles.
 *
 * # Safety
 * `out_xy` must hold `capacity` doubles.
 */
enum CvaeStatus cvae_predictions_copy(const struct CvaePredictions *p,
                                      double *out_xy,
                                      size_t capacity);

/**
 * # Safety
 * `p` must come from [`cvae_predict`] or be null.
 */
void cvae_predictions_free(struct CvaePredictions *p);

/**
 * Best-of-k average (`final_step = 0`) or final (`final_step = 1`)
 * displacement error of `k × horizon` predictions against `horizon` truths.
 *
 * # Safety
 * `predictions_xy` must hold `2·k·horizon` doubles, `truth_xy` `2·horizon`.
 */
enum CvaeStatus cvae_min_displacement_error(const double *predictions_xy,
                                            size_t k,
                                            const double *truth_xy,
                                            size_t horizon,
                                            int32_t final_step,
                                            double *out);

/**
 * Constant-velocity extrapolation of `n` observed positions.
 *
 * # Safety
 * `observed_xy` must hold `2·n` doubles and `out_xy` `2·horizon`.
 */
enum CvaeStatus cvae_constant_velocity(const double *observed_xy,
                                       size_t n,
                                       size_t horizon,
                                       double *out_xy);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CONTEXTVAE_H */
