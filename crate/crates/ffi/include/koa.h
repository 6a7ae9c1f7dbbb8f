#ifndef KOA_H
#define KOA_H

#pragma once

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  KOA_STATUS_OK = 0,
  KOA_STATUS_NULL_POINTER = 1,
  KOA_STATUS_INVALID_ARGUMENT = 2,
  KOA_STATUS_DATA = 3,
  KOA_STATUS_NUMERIC = 4,
  KOA_STATUS_IO = 5,
  KOA_STATUS_FORMAT = 6,
  KOA_STATUS_PANIC = 7,
} KoaStatus;

/**
 * A trained CNN base learner.
 */
typedef struct KoaCnn KoaCnn;

/**
 * A fitted meta-learner over stacked probabilities.
 */
typedef struct KoaMeta KoaMeta;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty if none. Valid
 * until the next failing call on the same thread.
 */
const char *koa_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *koa_version(void);

/**
 * Loads a CNN model file into `*out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
KoaStatus koa_cnn_load(const char *path, KoaCnn **out);

/**
 * # Safety
 * `model` must come from [`koa_cnn_load`] and not be used afterwards.
 */
void koa_cnn_free(KoaCnn *model);

/**
 * Writes the class count and the expected input height and width.
 *
 * # Safety
 * `model` must be a live handle; out-pointers may be null.
 */
KoaStatus koa_cnn_shape(const KoaCnn *model, size_t *n_classes, size_t *height, size_t *width);

/**
 * Class probabilities for `n_images` row-major `height x width` images
 * with intensities in `[0, 1]`. `out` receives `n_images * n_classes`
 * values.
 *
 * # Safety
 * `pixels` must hold `n_images * height * width` values and `out`
 * `n_images * n_classes`.
 */
KoaStatus koa_cnn_predict_proba(const KoaCnn *model,
                                const double *pixels,
                                size_t n_images,
                                double *out);

/**
 * Loads a meta-learner model file into `*out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
KoaStatus koa_meta_load(const char *path, KoaMeta **out);

/**
 * # Safety
 * `model` must come from [`koa_meta_load`] and not be used afterwards.
 */
void koa_meta_free(KoaMeta *model);

/**
 * Writes the class count and the stacked feature width.
 *
 * # Safety
 * `model` must be a live handle; out-pointers may be null.
 */
KoaStatus koa_meta_shape(const KoaMeta *model, size_t *n_classes, size_t *width);

/**
 * Class probabilities for `n_rows` stacked feature rows.
 *
 * # Safety
 * `rows` must hold `n_rows * width` values and `out` `n_rows * n_classes`.
 */
KoaStatus koa_meta_predict_proba(const KoaMeta *model,
                                 const double *rows,
                                 size_t n_rows,
                                 double *out);

/**
 * CLAHE on a row-major 8-bit image with 256 bins.
 *
 * # Safety
 * `pixels` and `out` must each hold `width * height` bytes.
 */
KoaStatus koa_clahe(const uint8_t *pixels,
                    size_t width,
                    size_t height,
                    double clip_limit,
                    size_t tiles_x,
                    size_t tiles_y,
                    uint8_t *out);

/**
 * Binary ROC AUC; `labels` holds 0 or 1 (nonzero counts as positive).
 *
 * # Safety
 * `scores` and `labels` must hold `n` values; `out` must be writable.
 */
KoaStatus koa_auc_binary(const double *scores, const uint8_t *labels, size_t n, double *out);

/**
 * Mean per-class recall.
 *
 * # Safety
 * `pred` and `truth` must hold `n` values; `out` must be writable.
 */
KoaStatus koa_balanced_accuracy(const size_t *pred,
                                const size_t *truth,
                                size_t n,
                                size_t n_classes,
                                double *out);

/**
 * KL grade 0–4 to the binary label (grades 0–1 → 0, 2–4 → 1).
 *
 * # Safety
 * `out` must be writable.
 */
KoaStatus koa_remap_binary(size_t grade, size_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KOA_H */
