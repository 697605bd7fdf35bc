#ifndef POLYSENT_H
#define POLYSENT_H

#include <stddef.h>
#include <stdint.h>

// Result of every fallible call.
typedef enum PsStatus {
  PS_STATUS_OK = 0,
  // A required pointer was null.
  PS_STATUS_NULL_POINTER = 1,
  // A string argument was not valid UTF-8.
  PS_STATUS_INVALID_UTF8 = 2,
  // The input was rejected (bad rating, bad ratios, empty matrix, ...).
  PS_STATUS_BAD_INPUT = 3,
  // A checkpoint could not be found or is unsupported.
  PS_STATUS_MODEL = 4,
  // File system failure.
  PS_STATUS_IO = 5,
  // Unexpected internal failure, including caught panics.
  PS_STATUS_INTERNAL = 6,
} PsStatus;

typedef enum PsLabel {
  PS_LABEL_NEGATIVE = 0,
  PS_LABEL_NEUTRAL = 1,
  PS_LABEL_POSITIVE = 2,
} PsLabel;

typedef enum PsTieBreak {
  PS_TIE_BREAK_SUM_SCORES = 0,
  PS_TIE_BREAK_LOWEST_ORDINAL = 1,
} PsTieBreak;

// Opaque accumulator of (language, truth, prediction) outcomes.
typedef struct PsEvaluator PsEvaluator;

// Opaque model handle.
typedef struct PsModel PsModel;

typedef struct PsClassMetrics {
  double precision;
  double recall;
  double f1;
  uint64_t support;
} PsClassMetrics;

typedef struct PsAverages {
  double precision;
  double recall;
  double f1;
} PsAverages;

// Classification report; `classes` is indexed by label ordinal.
typedef struct PsReport {
  struct PsClassMetrics classes[3];
  double accuracy;
  struct PsAverages macro_avg;
  struct PsAverages weighted_avg;
} PsReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the last failure on this thread, or null if none.
// Free with [`ps_string_free`].
char *ps_last_error(void);

// Release a string returned by this library. Null is ignored.
//
// # Safety
// `s` must be null or a pointer previously returned by this library.
void ps_string_free(char *s);

// Parse a rating such as `"4"`, `"4 stars"` or `"1 Star"`.
//
// # Safety
// `raw` must be a NUL-terminated string; `out` must be writable.
enum PsStatus ps_parse_star_rating(const char *raw, uint8_t *out);

// Map a 1..=5 star rating to a sentiment label.
//
// # Safety
// `out` must be writable.
enum PsStatus ps_map_stars_to_label(uint8_t stars, enum PsLabel *out);

// Normalize tweet text. The result may be empty; free it with
// [`ps_string_free`].
//
// # Safety
// `text` must be a NUL-terminated string; `out` must be writable.
enum PsStatus ps_normalize_text(const char *text, char **out);

// Split `n` stratum members into train/val/test counts.
//
// # Safety
// `ratios` must point to 3 doubles and `out` to 3 writable `size_t`s.
enum PsStatus ps_stratum_allocation(size_t n, const double *ratios, size_t *out);

// Majority vote over `members` probability rows (`scores` is
// `members * 3` doubles, row-major). `tie_break` is a [`PsTieBreak`].
//
// # Safety
// `scores` must point to `members * 3` doubles; `out` must be writable.
enum PsStatus ps_vote(const double *scores, size_t members, uint32_t tie_break, enum PsLabel *out);

// Classification report for a 3x3 confusion matrix (`counts` row-major,
// rows true labels, columns predictions).
//
// # Safety
// `counts` must point to 9 integers; `out` must be writable.
enum PsStatus ps_classification_report(const uint64_t *counts, struct PsReport *out);

// Load a model: `"toy"`, a checkpoint directory or a registry id.
// `max_seq_len` 0 keeps the default.
//
// # Safety
// `checkpoint` must be a NUL-terminated string; `out` must be writable.
enum PsStatus ps_model_load(const char *checkpoint,
                            size_t max_seq_len,
                            uint64_t seed,
                            struct PsModel **out);

// Score one text. `probs` receives 3 probabilities; `label` (optional)
// the argmax.
//
// # Safety
// `model` must come from [`ps_model_load`]; `text` must be NUL-terminated;
// `probs` must point to 3 writable doubles; `label` may be null.
enum PsStatus ps_model_predict(const struct PsModel *model,
                               const char *text,
                               double *probs,
                               enum PsLabel *label);

// # Safety
// `model` must be null or come from [`ps_model_load`], and not be used afterwards.
void ps_model_free(struct PsModel *model);

struct PsEvaluator *ps_evaluator_new(void);

// Record one outcome; `truth` and `predicted` are [`PsLabel`] values.
//
// # Safety
// `evaluator` must come from [`ps_evaluator_new`]; `language` must be
// NUL-terminated.
enum PsStatus ps_evaluator_record(struct PsEvaluator *evaluator,
                                  const char *language,
                                  uint32_t truth,
                                  uint32_t predicted);

// Overall and per-language report as JSON (same shape as the CLI's
// `report.json` plus `per_language`). Free with [`ps_string_free`].
//
// # Safety
// `evaluator` must come from [`ps_evaluator_new`]; `out` must be writable.
enum PsStatus ps_evaluator_report_json(const struct PsEvaluator *evaluator, char **out);

// # Safety
// `evaluator` must be null or come from [`ps_evaluator_new`], and not be used afterwards.
void ps_evaluator_free(struct PsEvaluator *evaluator);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* POLYSENT_H */
