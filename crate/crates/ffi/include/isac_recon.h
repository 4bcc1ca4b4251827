#ifndef ISAC_RECON_H
#define ISAC_RECON_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum IsacStatus {
  ISAC_STATUS_OK = 0,
  ISAC_STATUS_NULL_POINTER = 1,
  // Bad configuration, file contents or argument values.
  ISAC_STATUS_INVALID_INPUT = 2,
  // Inputs that violate a documented size or content rule.
  ISAC_STATUS_CONTRACT = 3,
  ISAC_STATUS_IO = 4,
  // The output buffer is smaller than the required length, which is
  // still written to the length argument.
  ISAC_STATUS_BUFFER_TOO_SMALL = 5,
  ISAC_STATUS_INTERNAL = 6,
} IsacStatus;

// SAGE estimator bound to one waveform and array.
typedef struct IsacEstimator IsacEstimator;

// Trained three-stage network.
typedef struct IsacModel IsacModel;

// One multipath component.
typedef struct IsacPath {
  double delay_s;
  double azimuth_rad;
  double elevation_rad;
  double power_db;
} IsacPath;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copy the last error message of this thread into `buf` (NUL-terminated,
// truncated to `len`). Returns the full message length in bytes.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
uintptr_t isac_last_error_message(char *buf, uintptr_t len);

// Library version as a static NUL-terminated string.
const char *isac_version(void);

// Create an estimator from a JSON run configuration (null for defaults).
//
// # Safety
// `config_json` must be null or a NUL-terminated string; `out` must be a
// valid pointer.
enum IsacStatus isac_estimator_new(const char *config_json, struct IsacEstimator **out);

// # Safety
// `h` must be null or a handle from [`isac_estimator_new`] not yet freed.
void isac_estimator_free(struct IsacEstimator *h);

// Estimate paths from a tone-major response given as interleaved
// `(re, im)` pairs, `2 * n_tones * n_elements` values. Paths are written
// strongest first; `out_len` receives their number.
//
// # Safety
// `cir` must hold the stated number of values and `out` room for
// `capacity` paths.
enum IsacStatus isac_estimator_extract(const struct IsacEstimator *h,
                                       const double *cir,
                                       uintptr_t n_tones,
                                       uintptr_t n_elements,
                                       struct IsacPath *out,
                                       uintptr_t capacity,
                                       uintptr_t *out_len);

// Load the stage-3 checkpoint `<models_dir>/mscr_stage3` trained under the
// given configuration (null for defaults).
//
// # Safety
// String arguments must be null-terminated; `out` must be valid.
enum IsacStatus isac_model_load(const char *config_json,
                                const char *models_dir,
                                struct IsacModel **out);

// # Safety
// `h` must be null or a handle from [`isac_model_load`] not yet freed.
void isac_model_free(struct IsacModel *h);

// Points produced per reconstruction, or 0 for a null handle.
//
// # Safety
// `h` must be null or a live model handle.
uintptr_t isac_model_n_points(const struct IsacModel *h);

// Reconstruct a point cloud from `n` estimated paths. Paths are filtered
// and padded as during dataset generation. Writes `3 * n_points` values to
// `out_xyz` and the predicted scene class (0 single, 1 mixed) to
// `out_label` when it is not null.
//
// # Safety
// `paths` must hold `n` entries and `out_xyz` room for `capacity` points.
enum IsacStatus isac_model_reconstruct(const struct IsacModel *h,
                                       const struct IsacPath *paths,
                                       uintptr_t n,
                                       double *out_xyz,
                                       uintptr_t capacity,
                                       uint8_t *out_label);

// Chamfer distance between two `[n, 3]` point arrays.
//
// # Safety
// `a` and `b` must hold `3 * na` and `3 * nb` values; `out` must be valid.
enum IsacStatus isac_chamfer(const double *a,
                             uintptr_t na,
                             const double *b,
                             uintptr_t nb,
                             double *out);

// F-score, precision and recall of `pred` against `gt` at `threshold`
// metres. `out` receives the three values in that order.
//
// # Safety
// `pred` and `gt` must hold `3 * n_pred` and `3 * n_gt` values; `out` must
// have room for 3 values.
enum IsacStatus isac_fscore(const double *pred,
                            uintptr_t n_pred,
                            const double *gt,
                            uintptr_t n_gt,
                            double threshold,
                            double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ISAC_RECON_H */
