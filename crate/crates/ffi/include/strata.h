/* C interface to the strata templating toolkit. */

#ifndef STRATA_H
#define STRATA_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum StrataStatus {
  StrataStatus_Ok = 0,
  /**
   * A required pointer argument was null.
   */
  StrataStatus_NullArg = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  StrataStatus_Utf8 = 2,
  /**
   * Reading or writing a file failed.
   */
  StrataStatus_Io = 3,
  /**
   * The input did not parse.
   */
  StrataStatus_Parse = 4,
  /**
   * Parsed but failed validation, or an index was out of range.
   */
  StrataStatus_Invalid = 5,
  /**
   * A bug tripped an internal panic; the handle is still usable.
   */
  StrataStatus_Internal = 6,
} StrataStatus;

typedef struct StrataMatrix StrataMatrix;

typedef struct StrataTemplate StrataTemplate;

typedef struct StrataTrace StrataTrace;

/**
 * Shape and score of one template entry.
 */
typedef struct StrataEntryInfo {
  uint64_t offset;
  uint64_t granularity_bytes;
  double score;
  uintptr_t event_count;
  uintptr_t suppress_count;
} StrataEntryInfo;

/**
 * Precision / recall / F-score triple for one event.
 */
typedef struct StrataScore {
  double precision;
  double recall;
  double f_score;
} StrataScore;

/**
 * Cost figures for a campaign plan, in seconds.
 */
typedef struct StrataEstimate {
  double flat_seconds;
  double layered_seconds;
  /**
   * flat / layered; 0 when the layered plan costs nothing.
   */
  double speedup;
} StrataEstimate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *strata_version(void);

/**
 * Message for the most recent failure on this thread. Empty string when
 * nothing failed yet. Valid until the next failing call on the same thread.
 */
const char *strata_last_error(void);

/**
 * Loads an access trace from a TOML file into a new handle.
 *
 * # Safety
 * `path` must point to a NUL-terminated string and `out` to writable
 * storage for one pointer. On success `*out` owns the trace and must be
 * released with [`strata_trace_free`].
 */
enum StrataStatus strata_trace_load(const char *path, struct StrataTrace **out);

/**
 * Number of events the trace defines.
 *
 * # Safety
 * `trace` must be a live handle from [`strata_trace_load`]; `out` must be
 * writable.
 */
enum StrataStatus strata_trace_event_count(const struct StrataTrace *trace, uintptr_t *out);

/**
 * Releases a trace handle. Null is a no-op.
 *
 * # Safety
 * `trace` must be null or a pointer obtained from [`strata_trace_load`]
 * that has not been freed already.
 */
void strata_trace_free(struct StrataTrace *trace);

/**
 * Loads a hit-ratio matrix from a CSV report file.
 *
 * # Safety
 * `path` must point to a NUL-terminated string and `out` to writable
 * storage for one pointer. On success `*out` must be released with
 * [`strata_matrix_free`].
 */
enum StrataStatus strata_matrix_load_csv(const char *path, struct StrataMatrix **out);

/**
 * Writes the matrix dimensions. Either out-pointer may be null to skip it.
 *
 * # Safety
 * `matrix` must be a live handle from [`strata_matrix_load_csv`].
 */
enum StrataStatus strata_matrix_shape(const struct StrataMatrix *matrix,
                                      uintptr_t *events,
                                      uintptr_t *locations);

/**
 * Hit ratio of one cell, by event and location index.
 *
 * # Safety
 * `matrix` must be a live handle; `out` must be writable.
 */
enum StrataStatus strata_matrix_ratio(const struct StrataMatrix *matrix,
                                      uintptr_t event,
                                      uintptr_t location,
                                      double *out);

/**
 * Releases a matrix handle. Null is a no-op.
 *
 * # Safety
 * `matrix` must be null or an unfreed pointer from
 * [`strata_matrix_load_csv`].
 */
void strata_matrix_free(struct StrataMatrix *matrix);

/**
 * Classifies a matrix into a template with default settings, including the
 * read-around suppression and distinguisher passes.
 *
 * # Safety
 * `matrix` must be a live handle and `out` writable. On success `*out`
 * must be released with [`strata_template_free`].
 */
enum StrataStatus strata_classify(const struct StrataMatrix *matrix, struct StrataTemplate **out);

/**
 * Loads a template from a TOML file.
 *
 * # Safety
 * `path` must point to a NUL-terminated string and `out` to writable
 * storage for one pointer. On success `*out` must be released with
 * [`strata_template_free`].
 */
enum StrataStatus strata_template_load(const char *path, struct StrataTemplate **out);

/**
 * Saves a template to a TOML file.
 *
 * # Safety
 * `template` must be a live handle; `path` must point to a NUL-terminated
 * string.
 */
enum StrataStatus strata_template_save(const struct StrataTemplate *template_, const char *path);

/**
 * Number of entries in the template.
 *
 * # Safety
 * `template` must be a live handle; `out` must be writable.
 */
enum StrataStatus strata_template_entry_count(const struct StrataTemplate *template_,
                                              uintptr_t *out);

/**
 * Shape and score of the entry at `index`.
 *
 * # Safety
 * `template` must be a live handle; `out` must be writable.
 */
enum StrataStatus strata_template_entry_info(const struct StrataTemplate *template_,
                                             uintptr_t index,
                                             struct StrataEntryInfo *out);

/**
 * Copies the entry's event group as a `+`-joined, NUL-terminated name into
 * `buf`. `*written` gets the full length so callers can grow a short
 * buffer; passing `cap` 0 only measures.
 *
 * # Safety
 * `template` must be a live handle. `buf` must be null or point to `cap`
 * writable bytes; `written` must be null or writable.
 */
enum StrataStatus strata_template_entry_events(const struct StrataTemplate *template_,
                                               uintptr_t index,
                                               char *buf,
                                               uintptr_t cap,
                                               uintptr_t *written);

/**
 * Releases a template handle. Null is a no-op.
 *
 * # Safety
 * `template` must be null or an unfreed pointer from a template-producing
 * call.
 */
void strata_template_free(struct StrataTemplate *template_);

/**
 * Precision, recall, and F-score from match counts. All-zero counts score
 * a vacuous 1.0 across the board.
 *
 * # Safety
 * `out` must be writable.
 */
enum StrataStatus strata_score_counts(uint64_t true_pos,
                                      uint64_t false_pos,
                                      uint64_t false_neg,
                                      struct StrataScore *out);

/**
 * Campaign cost forecast. `layer_bytes`/`layer_seconds` are parallel
 * arrays: granularity in bytes and measured total seconds per layer; pass
 * `n_layers` 0 for a flat sweep only (layered cost 0, speedup 0).
 *
 * # Safety
 * `layer_bytes` and `layer_seconds` must be null or point to `n_layers`
 * readable elements each; `out` must be writable.
 */
enum StrataStatus strata_estimate(double flat_seconds_per_mb,
                                  double region_mb,
                                  uint32_t keys,
                                  const uint64_t *layer_bytes,
                                  const double *layer_seconds,
                                  uintptr_t n_layers,
                                  struct StrataEstimate *out);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* STRATA_H */
