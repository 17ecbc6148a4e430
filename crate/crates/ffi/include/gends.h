#ifndef GENDS_H
#define GENDS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes of every fallible call.
typedef enum GendsStatus {
  GENDS_STATUS_OK = 0,
  GENDS_STATUS_NULL_ARGUMENT = 1,
  GENDS_STATUS_INVALID_UTF8 = 2,
  GENDS_STATUS_IO = 3,
  GENDS_STATUS_PARSE = 4,
  GENDS_STATUS_VALIDATION = 5,
  GENDS_STATUS_CHECKPOINT = 6,
  GENDS_STATUS_INPUT = 7,
  GENDS_STATUS_INTERNAL = 8,
  GENDS_STATUS_PANIC = 9,
} GendsStatus;

// Opaque handle to a loaded model and knowledge base.
typedef struct GendsEngine GendsEngine;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Loads a checkpoint and a knowledge base (JSON lines) and stores a new
// engine in `*out`. `*out` is left untouched on failure.
//
// # Safety
// `model_path` and `kb_path` must be NUL-terminated strings; `out` must be
// a valid pointer.
enum GendsStatus gends_engine_load(const char *model_path,
                                   const char *kb_path,
                                   struct GendsEngine **out);

// Selects greedy decoding (`width == 0`) or beam search of the given width.
//
// # Safety
// `engine` must come from [`gends_engine_load`] and not be shared with a
// concurrent call.
enum GendsStatus gends_engine_set_beam_width(struct GendsEngine *engine, uint32_t width);

// Answers `message` and writes the reply object as a JSON string to
// `*out_json` (fields `response_text`, `entities`, `gate_trace`, `score`).
//
// # Safety
// `engine` must come from [`gends_engine_load`]; `message` must be a
// NUL-terminated string; `out_json` must be a valid pointer. The engine may
// be used from several threads at once.
enum GendsStatus gends_engine_reply_json(const struct GendsEngine *engine,
                                         const char *message,
                                         char **out_json);

// Releases an engine. NULL is ignored.
//
// # Safety
// `engine` must come from [`gends_engine_load`] and not be used afterwards.
void gends_engine_free(struct GendsEngine *engine);

// Releases a string returned by this library. NULL is ignored.
//
// # Safety
// `s` must come from this library and not be used afterwards.
void gends_string_free(char *s);

// Message of the last failed call on this thread, or NULL. The pointer is
// valid until the next failing call on the same thread.
const char *gends_last_error(void);

// Library version as a static NUL-terminated string.
const char *gends_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GENDS_H */
