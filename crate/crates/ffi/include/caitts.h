#ifndef CAITTS_H
#define CAITTS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CaittsStatus {
  CAITTS_STATUS_OK = 0,
  CAITTS_STATUS_NULL_POINTER = 1,
  CAITTS_STATUS_INVALID_ARGUMENT = 2,
  CAITTS_STATUS_INTENSITY_RANGE = 3,
  CAITTS_STATUS_IO = 4,
  CAITTS_STATUS_FORMAT = 5,
  CAITTS_STATUS_DOMAIN = 6,
  CAITTS_STATUS_PANIC = 7,
} CaittsStatus;

/**
 * Result of one synthesis call.
 */
typedef struct CaittsMel CaittsMel;

/**
 * Loaded acoustic model.
 */
typedef struct CaittsModel CaittsModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *caitts_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *caitts_version(void);

/**
 * Loads a checkpoint written by `caitts train-tts`.
 */
enum CaittsStatus caitts_model_load(const char *path, struct CaittsModel **out);

/**
 * Freshly initialized model from a named preset: "full", "desk" or "toy".
 */
enum CaittsStatus caitts_model_new(const char *preset, uint64_t seed, struct CaittsModel **out);

/**
 * Releases a model; null is ignored.
 */
void caitts_model_free(struct CaittsModel *model);

/**
 * Width of the mel frames the model produces.
 */
enum CaittsStatus caitts_model_mel_dim(const struct CaittsModel *model, size_t *out);

/**
 * Index of an ARPAbet symbol (stress digits ignored).
 */
enum CaittsStatus caitts_phoneme_id(const char *symbol, uint32_t *out);

/**
 * Eval-mode synthesis. `intensity` must lie in (0, 1).
 */
enum CaittsStatus caitts_synthesize(const struct CaittsModel *model,
                                    const uint32_t *phoneme_ids,
                                    size_t n_phonemes,
                                    uint32_t speaker_id,
                                    uint32_t accent_id,
                                    double intensity,
                                    struct CaittsMel **out);

/**
 * Frame count and width of a synthesized mel.
 */
enum CaittsStatus caitts_mel_shape(const struct CaittsMel *mel, size_t *frames, size_t *dims);

/**
 * Row-major `frames × dims` values, owned by the handle.
 */
const double *caitts_mel_data(const struct CaittsMel *mel);

/**
 * Copies the predicted per-phoneme durations (in frames) into `buf`.
 * `len` receives the phoneme count; fails if `cap` is smaller.
 */
enum CaittsStatus caitts_mel_durations(const struct CaittsMel *mel,
                                       size_t *buf,
                                       size_t cap,
                                       size_t *len);

/**
 * Releases a mel; null is ignored.
 */
void caitts_mel_free(struct CaittsMel *mel);

/**
 * Intensity the model's predictor reads from `mel`.
 */
enum CaittsStatus caitts_measure_intensity(const struct CaittsModel *model,
                                           const struct CaittsMel *mel,
                                           double *out);

/**
 * Mel-cepstral distortion in dB after DTW between two row-major
 * `[frames, dims]` log-mel arrays of equal width.
 */
enum CaittsStatus caitts_mcd_dtw(const double *a,
                                 size_t a_frames,
                                 const double *b,
                                 size_t b_frames,
                                 size_t dims,
                                 double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CAITTS_H */
