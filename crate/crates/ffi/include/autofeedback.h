#ifndef AUTOFEEDBACK_H
#define AUTOFEEDBACK_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define AF_ISSUE_OVER_PRAISE 1

#define AF_ISSUE_OVER_INFERENCE 2

typedef enum AfStatus {
  AF_STATUS_OK = 0,
  AF_STATUS_NULL_POINTER = 1,
  AF_STATUS_INVALID_UTF8 = 2,
  AF_STATUS_INVALID_ARGUMENT = 3,
  AF_STATUS_STATISTICS = 4,
  AF_STATUS_PARSE = 5,
  AF_STATUS_IO = 6,
  AF_STATUS_PANIC = 7,
} AfStatus;

typedef enum AfDecision {
  AF_DECISION_GOOD_ENOUGH = 0,
  AF_DECISION_REVISED = 1,
} AfDecision;

typedef enum AfTemplateKind {
  AF_TEMPLATE_KIND_AGENT1 = 0,
  AF_TEMPLATE_KIND_AGENT2 = 1,
} AfTemplateKind;

typedef enum AfScoreLevel {
  AF_SCORE_LEVEL_BEGINNING = 0,
  AF_SCORE_LEVEL_PROFICIENT = 1,
} AfScoreLevel;

/**
 * An assessment item with its rubric.
 */
typedef struct AfContext AfContext;

/**
 * A prompt template.
 */
typedef struct AfTemplate AfTemplate;

/**
 * Parsed Agent 2 output.
 */
typedef struct AfVerdict AfVerdict;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, a static NUL-terminated string.
 */
const char *af_version(void);

/**
 * Message for the last failed call on this thread; empty after a success.
 * Valid until the next call on the same thread.
 */
const char *af_last_error(void);

/**
 * Releases a string returned by this library. Null is a no-op.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void af_string_free(char *s);

/**
 * Pearson chi-square of the 2x2 table [[a, b], [c, d]], no continuity
 * correction.
 *
 * # Safety
 * `out` must be a valid pointer to a double.
 */
enum AfStatus af_chi_square_2x2(uint64_t a,
                                uint64_t b,
                                uint64_t c,
                                uint64_t d,
                                double *out_statistic);

/**
 * Upper-tail probability of a chi-square statistic with one degree of freedom.
 *
 * # Safety
 * `out_p` must be a valid pointer to a double.
 */
enum AfStatus af_p_value_df1(double statistic, double *out_p);

/**
 * `count / n` as a percentage rounded half-up to two decimals, reported
 * in hundredths of a percent (1542 for 15.42).
 *
 * # Safety
 * `out_hundredths` must be a valid pointer.
 */
enum AfStatus af_percent_round2(uint64_t count, uint64_t n, int64_t *out_hundredths);

/**
 * Parses Agent 2 output into a verdict handle.
 *
 * # Safety
 * `raw` must be a NUL-terminated string; `out_verdict` a valid pointer.
 */
enum AfStatus af_verdict_parse(const char *raw, struct AfVerdict **out_verdict);

/**
 * # Safety
 * `verdict` must come from [`af_verdict_parse`] and not have been freed.
 */
void af_verdict_free(struct AfVerdict *verdict);

/**
 * # Safety
 * `verdict` must be a live handle; `out_decision` a valid pointer.
 */
enum AfStatus af_verdict_decision(const struct AfVerdict *verdict, enum AfDecision *out_decision);

/**
 * Detected issues as a bitmask of `AF_ISSUE_*`.
 *
 * # Safety
 * `verdict` must be a live handle; `out_issues` a valid pointer.
 */
enum AfStatus af_verdict_issues(const struct AfVerdict *verdict, uint32_t *out_issues);

/**
 * Whether the output could not be split cleanly and needs a human look.
 *
 * # Safety
 * `verdict` must be a live handle; `out_flag` a valid pointer.
 */
enum AfStatus af_verdict_needs_review(const struct AfVerdict *verdict, bool *out_flag);

/**
 * The revised feedback text, or null when the verdict is good enough.
 *
 * # Safety
 * `verdict` must be a live handle; `out_text` a valid pointer. A non-null
 * result is released with [`af_string_free`].
 */
enum AfStatus af_verdict_revised_feedback(const struct AfVerdict *verdict, char **out_text);

/**
 * One of the built-in templates.
 *
 * # Safety
 * `out_template` must be a valid pointer.
 */
enum AfStatus af_template_bundled(enum AfTemplateKind kind, struct AfTemplate **out_template);

/**
 * Loads a template file and its sibling `.toml` manifest.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out_template` a valid pointer.
 */
enum AfStatus af_template_load(const char *path, struct AfTemplate **out_template);

/**
 * # Safety
 * `template` must come from this library and not have been freed.
 */
void af_template_free(struct AfTemplate *template_);

/**
 * The built-in assessment context.
 *
 * # Safety
 * `out_context` must be a valid pointer.
 */
enum AfStatus af_context_bundled(struct AfContext **out_context);

/**
 * Loads an assessment context from a TOML file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out_context` a valid pointer.
 */
enum AfStatus af_context_load(const char *path, struct AfContext **out_context);

/**
 * # Safety
 * `context` must come from this library and not have been freed.
 */
void af_context_free(struct AfContext *context);

/**
 * Fills a template for one student response. `agent1_feedback` is
 * required for Agent 2 templates and must be null for Agent 1 templates.
 *
 * # Safety
 * Handles must be live, strings NUL-terminated, `out_prompt` a valid
 * pointer. The result is released with [`af_string_free`].
 */
enum AfStatus af_assemble(const struct AfTemplate *template_,
                          const struct AfContext *context,
                          const char *response_id,
                          const char *response_text,
                          enum AfScoreLevel level,
                          const char *agent1_feedback,
                          char **out_prompt);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AUTOFEEDBACK_H */
