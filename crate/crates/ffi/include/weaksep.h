/* Generated by cbindgen from crates/ffi/src/lib.rs. */

#ifndef WEAKSEP_H
#define WEAKSEP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum WsModelKind {
  WS_MODEL_KIND_TRANSCRIPTOR = 0,
  WS_MODEL_KIND_SEPARATOR = 1,
  WS_MODEL_KIND_CLASSIFIER = 2,
} WsModelKind;

/**
 * Result of every fallible call.
 */
typedef enum WsStatus {
  WS_STATUS_OK = 0,
  WS_STATUS_NULL_POINTER = 1,
  WS_STATUS_INVALID_ARGUMENT = 2,
  WS_STATUS_IO = 3,
  WS_STATUS_WRONG_MODEL = 4,
  WS_STATUS_BUFFER_TOO_SMALL = 5,
  WS_STATUS_INTERNAL = 6,
} WsStatus;

/**
 * Loaded model.
 */
typedef struct WsModel WsModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread; empty if none. Valid until
 * the next failing call on the same thread.
 */
const char *ws_last_error_message(void);

/**
 * Loads a checkpoint of any model kind into `*out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum WsStatus ws_model_load(const char *path, struct WsModel **out);

/**
 * Releases a handle from [`ws_model_load`]; null is ignored.
 *
 * # Safety
 * `model` must come from [`ws_model_load`] and not be used afterwards.
 */
void ws_model_free(struct WsModel *model);

/**
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum WsStatus ws_model_kind(const struct WsModel *model, enum WsModelKind *out);

/**
 * Number of instruments, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t ws_model_num_instruments(const struct WsModel *model);

/**
 * Copies instrument `index`'s name, NUL-terminated, into `buf`.
 *
 * # Safety
 * `model` must be a live handle and `buf` valid for `len` bytes.
 */
enum WsStatus ws_model_instrument_name(const struct WsModel *model,
                                       size_t index,
                                       char *buf,
                                       size_t len);

/**
 * Spectrogram frames for a signal of `len` samples.
 */
size_t ws_frame_count(size_t len);

/**
 * Separates `mixture` into `out`, laid out instrument-major as
 * `I * len` samples.
 *
 * # Safety
 * `mixture` must hold `len` samples and `out` room for `out_len`.
 */
enum WsStatus ws_separate(const struct WsModel *model,
                          const double *mixture,
                          size_t len,
                          double *out,
                          size_t out_len);

/**
 * Note probabilities for `mixture`, written as `I * 88 * T` values with
 * `T = ws_frame_count(len)`, time fastest. Notes are MIDI 21 to 108.
 *
 * # Safety
 * `mixture` must hold `len` samples and `out` room for `out_len`.
 */
enum WsStatus ws_transcribe(const struct WsModel *model,
                            const double *mixture,
                            size_t len,
                            double *out,
                            size_t out_len);

/**
 * Scale-invariant SDR in dB of `estimate` against `reference`.
 *
 * # Safety
 * Both arrays must hold `len` samples; `out` must be valid.
 */
enum WsStatus ws_si_sdr(const double *estimate, const double *reference, size_t len, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* WEAKSEP_H */
