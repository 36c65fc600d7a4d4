#ifndef SPANCONF_H
#define SPANCONF_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum SpanconfStatus {
  SPANCONF_STATUS_OK = 0,
  SPANCONF_STATUS_NULL_POINTER = 1,
  SPANCONF_STATUS_INVALID_ARGUMENT = 2,
  SPANCONF_STATUS_PARSE = 3,
  SPANCONF_STATUS_IO = 4,
  // The statistic is undefined for this input (e.g. a single label class).
  SPANCONF_STATUS_DEGENERATE = 5,
  SPANCONF_STATUS_PANIC = 6,
} SpanconfStatus;

// A parsed JSONL dataset of question records.
typedef struct SpanconfDataset SpanconfDataset;

// A generation trace: tokens with their log-probabilities.
typedef struct SpanconfTrace SpanconfTrace;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or NULL. Valid until the
// next call into the library from the same thread.
const char *spanconf_last_error(void);

// Library version as a static NUL-terminated string.
const char *spanconf_version(void);

// Releases a string returned by the library. NULL is ignored.
//
// # Safety
// `s` must come from this library and not be freed twice.
void spanconf_string_free(char *s);

// Builds a trace from `len` natural-log token probabilities (each <= 0).
//
// # Safety
// `logprobs` must point to `len` doubles; `out` must be writable.
enum SpanconfStatus spanconf_trace_from_logprobs(const double *logprobs,
                                                 size_t len,
                                                 struct SpanconfTrace **out);

// # Safety
// `trace` must come from this library and not be freed twice. NULL is ignored.
void spanconf_trace_free(struct SpanconfTrace *trace);

// # Safety
// `trace` must be a live handle; `out` must be writable.
enum SpanconfStatus spanconf_trace_len(const struct SpanconfTrace *trace, size_t *out);

// exp of the mean negative log-likelihood.
//
// # Safety
// `trace` must be a live handle; `out` must be writable.
enum SpanconfStatus spanconf_perplexity(const struct SpanconfTrace *trace, double *out);

// Smallest token probability.
//
// # Safety
// `trace` must be a live handle; `out` must be writable.
enum SpanconfStatus spanconf_min_p(const struct SpanconfTrace *trace, double *out);

// Lowest mean probability over windows of `window` tokens (clamped to the
// trace length). Lower means less confident.
//
// # Safety
// `trace` must be a live handle; `out` must be writable.
enum SpanconfStatus spanconf_lsc(const struct SpanconfTrace *trace, size_t window, double *out);

// AUROC of `scores` (higher = more likely hallucinated) against `positives`
// (non-zero = hallucinated).
//
// # Safety
// Both arrays must hold `len` elements; `out` must be writable.
enum SpanconfStatus spanconf_auroc(const double *scores,
                                   const uint8_t *positives,
                                   size_t len,
                                   double *out);

// Pearson correlation of two arrays of `len` values.
//
// # Safety
// Both arrays must hold `len` elements; `out` must be writable.
enum SpanconfStatus spanconf_pcc(const double *x, const double *y, size_t len, double *out);

// ROUGE-L F1 between two UTF-8 strings.
//
// # Safety
// Both strings must be NUL-terminated; `out` must be writable.
enum SpanconfStatus spanconf_rouge_l_f1(const char *candidate, const char *reference, double *out);

// Reads and validates a JSONL dataset file.
//
// # Safety
// `path` must be NUL-terminated; `out` must be writable.
enum SpanconfStatus spanconf_dataset_open(const char *path, struct SpanconfDataset **out);

// # Safety
// `dataset` must come from this library and not be freed twice. NULL is ignored.
void spanconf_dataset_free(struct SpanconfDataset *dataset);

// # Safety
// `dataset` must be a live handle; `out` must be writable.
enum SpanconfStatus spanconf_dataset_len(const struct SpanconfDataset *dataset, size_t *out);

// Copies the id of record `index`. Free with [`spanconf_string_free`].
//
// # Safety
// `dataset` must be a live handle; `out` must be writable.
enum SpanconfStatus spanconf_dataset_id(const struct SpanconfDataset *dataset,
                                        size_t index,
                                        char **out);

// Copies the greedy trace of record `index` into a new handle.
//
// # Safety
// `dataset` must be a live handle; `out` must be writable.
enum SpanconfStatus spanconf_dataset_greedy_trace(const struct SpanconfDataset *dataset,
                                                  size_t index,
                                                  struct SpanconfTrace **out);

// Scores, labels and evaluates the whole dataset and returns the summary
// as a JSON string. Free it with [`spanconf_string_free`]. Returns
// `SPANCONF_STATUS_DEGENERATE` (with the JSON still written) when no metric
// could be evaluated.
//
// # Safety
// `dataset` must be a live handle; `out_json` must be writable.
enum SpanconfStatus spanconf_dataset_evaluate(const struct SpanconfDataset *dataset,
                                              size_t window,
                                              double rouge_threshold,
                                              double semantic_threshold,
                                              double alpha,
                                              char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPANCONF_H */
