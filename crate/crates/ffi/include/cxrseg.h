#ifndef CXRSEG_H
#define CXRSEG_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CxrStatus {
  CXR_STATUS_OK = 0,
  CXR_STATUS_NULL_POINTER = 1,
  CXR_STATUS_INVALID_ARGUMENT = 2,
  CXR_STATUS_DECODE = 3,
  CXR_STATUS_UNSUPPORTED_FORMAT = 4,
  CXR_STATUS_DIMENSION_MISMATCH = 5,
  CXR_STATUS_UNDEFINED_METRIC = 6,
  CXR_STATUS_UNDEFINED_CORRELATION = 7,
  CXR_STATUS_FORMAT = 8,
  CXR_STATUS_IO = 9,
  CXR_STATUS_INTERNAL = 10,
  CXR_STATUS_PANIC = 11,
} CxrStatus;

// Grayscale image with intensities in [0, 1].
typedef struct CxrImage CxrImage;

// Binary raster mask.
typedef struct CxrMask CxrMask;

typedef struct CxrPairedTest {
  double t_statistic;
  size_t degrees_of_freedom;
  double p_value;
  bool significant;
} CxrPairedTest;

typedef struct CxrMantel {
  double rho;
  double p_value;
  size_t permutation_count;
  bool exhaustive;
} CxrMantel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL if none. The
// pointer stays valid until the next failing call on the same thread.
const char *cxr_last_error_message(void);

// Decodes PNG or BMP bytes to a grayscale image.
//
// # Safety
// `bytes` must point to `len` readable bytes; `out_image` must be writable.
enum CxrStatus cxr_image_decode(const uint8_t *bytes, size_t len, struct CxrImage **out_image);

// Builds an image from `width * height` row-major intensities in [0, 1].
//
// # Safety
// `pixels` must point to `width * height` doubles; `out_image` must be writable.
enum CxrStatus cxr_image_from_pixels(size_t width,
                                     size_t height,
                                     const double *pixels,
                                     struct CxrImage **out_image);

// # Safety
// `image` must be NULL or a live handle.
size_t cxr_image_width(const struct CxrImage *image);

// # Safety
// `image` must be NULL or a live handle.
size_t cxr_image_height(const struct CxrImage *image);

// Copies the row-major intensities into `dst`, which must hold exactly
// `width * height` doubles.
//
// # Safety
// `image` must be a live handle and `dst` must point to `len` writable doubles.
enum CxrStatus cxr_image_pixels(const struct CxrImage *image, double *dst, size_t len);

// Encodes as 8-bit grayscale PNG. Free the buffer with [`cxr_bytes_free`].
//
// # Safety
// `image` must be a live handle; both out pointers must be writable.
enum CxrStatus cxr_image_encode_png(const struct CxrImage *image,
                                    uint8_t **out_bytes,
                                    size_t *out_len);

// # Safety
// `bytes` and `len` must come from one call to [`cxr_image_encode_png`] or
// [`cxr_mask_encode_png`], and not be freed twice.
void cxr_bytes_free(uint8_t *bytes, size_t len);

// # Safety
// `image` must be NULL or a handle not yet freed.
void cxr_image_free(struct CxrImage *image);

// Decodes a mask PNG; every nonzero pixel is foreground.
//
// # Safety
// `bytes` must point to `len` readable bytes; `out_mask` must be writable.
enum CxrStatus cxr_mask_decode(const uint8_t *bytes, size_t len, struct CxrMask **out_mask);

// Builds a mask from `width * height` row-major bytes; nonzero is foreground.
//
// # Safety
// `bits` must point to `width * height` bytes; `out_mask` must be writable.
enum CxrStatus cxr_mask_from_bits(size_t width,
                                  size_t height,
                                  const uint8_t *bits,
                                  struct CxrMask **out_mask);

// # Safety
// `mask` must be NULL or a live handle.
size_t cxr_mask_width(const struct CxrMask *mask);

// # Safety
// `mask` must be NULL or a live handle.
size_t cxr_mask_height(const struct CxrMask *mask);

// Number of foreground pixels.
//
// # Safety
// `mask` must be NULL or a live handle.
size_t cxr_mask_count(const struct CxrMask *mask);

// Writes 0/1 bytes into `dst`, which must hold `width * height` bytes.
//
// # Safety
// `mask` must be a live handle and `dst` must point to `len` writable bytes.
enum CxrStatus cxr_mask_bits(const struct CxrMask *mask, uint8_t *dst, size_t len);

// Encodes as a 0/255 grayscale PNG. Free the buffer with [`cxr_bytes_free`].
//
// # Safety
// `mask` must be a live handle; both out pointers must be writable.
enum CxrStatus cxr_mask_encode_png(const struct CxrMask *mask,
                                   uint8_t **out_bytes,
                                   size_t *out_len);

// # Safety
// `mask` must be NULL or a handle not yet freed.
void cxr_mask_free(struct CxrMask *mask);

// Erodes `raw` by a disk of `erode_radius`, then dilates the result by
// `tight_radius` and `loose_radius`. Any out pointer may be NULL to skip
// that variant.
//
// # Safety
// `raw` must be a live handle; non-NULL out pointers must be writable.
enum CxrStatus cxr_mask_expand(const struct CxrMask *raw,
                               size_t erode_radius,
                               size_t tight_radius,
                               size_t loose_radius,
                               struct CxrMask **out_refined,
                               struct CxrMask **out_tight,
                               struct CxrMask **out_loose);

// Zeroes every pixel outside the mask.
//
// # Safety
// `image` and `mask` must be live handles; `out_image` must be writable.
enum CxrStatus cxr_mask_apply(const struct CxrImage *image,
                              const struct CxrMask *mask,
                              struct CxrImage **out_image);

// Dice loss between two masks of equal shape.
//
// # Safety
// `a` and `b` must be live handles; `out_loss` must be writable.
enum CxrStatus cxr_dice_loss(const struct CxrMask *a, const struct CxrMask *b, double *out_loss);

// Mean pixel BCE of probabilities (row-major, same shape as `truth`).
//
// # Safety
// `probs` must point to `len` doubles, `truth` must be a live handle and
// `out_loss` writable.
enum CxrStatus cxr_pixel_bce_loss(const double *probs,
                                  size_t len,
                                  const struct CxrMask *truth,
                                  double epsilon,
                                  double *out_loss);

// Rank-based AUROC; `labels` are 0/1 bytes.
//
// # Safety
// `scores` and `labels` must each point to `n` elements; `out_auroc` must be writable.
enum CxrStatus cxr_auroc(const double *scores, const uint8_t *labels, size_t n, double *out_auroc);

// F1-maximizing threshold over the observed scores (predict positive when
// score >= threshold).
//
// # Safety
// `scores` and `labels` must each point to `n` elements; out pointers must be writable.
enum CxrStatus cxr_select_threshold_f1(const double *scores,
                                       const uint8_t *labels,
                                       size_t n,
                                       double *out_threshold,
                                       double *out_f1);

// `1 - max` over five abnormality probabilities.
//
// # Safety
// `probs` must point to five doubles; `out_score` must be writable.
enum CxrStatus cxr_no_finding_score(const double *probs, double *out_score);

// Two-sided paired t-test on `x - y`.
//
// # Safety
// `x` and `y` must each point to `n` doubles; `out_result` must be writable.
enum CxrStatus cxr_paired_t_test(const double *x,
                                 const double *y,
                                 size_t n,
                                 double alpha,
                                 struct CxrPairedTest *out_result);

// One-sided Mantel test between two symmetric `k x k` row-major matrices.
//
// # Safety
// `a` and `b` must each point to `k * k` doubles; `out_result` must be writable.
enum CxrStatus cxr_mantel_test(const double *a,
                               const double *b,
                               size_t k,
                               size_t permutations,
                               uint64_t seed,
                               struct CxrMantel *out_result);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CXRSEG_H */
