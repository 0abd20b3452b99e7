#ifndef MODPROMPT_H
#define MODPROMPT_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MpRegime {
  MP_REGIME_SPECIFIC = 0,
  MP_REGIME_AGNOSTIC = 1,
  MP_REGIME_FUSED = 2,
} MpRegime;

typedef enum MpReportFormat {
  MP_REPORT_FORMAT_JSON = 0,
  MP_REPORT_FORMAT_MARKDOWN = 1,
  MP_REPORT_FORMAT_CSV = 2,
} MpReportFormat;

/**
 * Result of every fallible call.
 */
typedef enum MpStatus {
  MP_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  MP_STATUS_NULL_ARGUMENT = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  MP_STATUS_INVALID_UTF8 = 2,
  /**
   * Invalid configuration, flag value or label.
   */
  MP_STATUS_INVALID_INPUT = 3,
  /**
   * File system failure.
   */
  MP_STATUS_IO = 4,
  /**
   * Missing or inconsistent checkpoint.
   */
  MP_STATUS_CHECKPOINT = 5,
  /**
   * Any other failure while running.
   */
  MP_STATUS_RUNTIME = 6,
  /**
   * A panic was caught at the boundary.
   */
  MP_STATUS_PANIC = 7,
} MpStatus;

typedef enum MpTaskKind {
  MP_TASK_KIND_SINGLE_CLASS = 0,
  MP_TASK_KIND_SEQUENCE_LABEL = 1,
  MP_TASK_KIND_RELATION = 2,
} MpTaskKind;

/**
 * A frozen backbone checkpoint.
 */
typedef struct MpBackbone MpBackbone;

/**
 * Experiment configuration.
 */
typedef struct MpExperiment MpExperiment;

/**
 * A label-prompt store bound to the backbone it was loaded against.
 */
typedef struct MpPromptStore MpPromptStore;

/**
 * Aggregated evaluation report.
 */
typedef struct MpReport MpReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failing call on this thread (empty if none). The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *mp_last_error(void);

/**
 * Library version as a static string.
 */
const char *mp_version(void);

/**
 * Release a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must be null or a string returned by this library, freed once.
 */
void mp_string_free(char *s);

/**
 * Parse an experiment config from JSON text; missing keys take defaults.
 *
 * # Safety
 * `json` must be a valid C string; `out` a valid pointer.
 */
enum MpStatus mp_experiment_from_json(const char *json, struct MpExperiment **out);

/**
 * Read an experiment config file.
 *
 * # Safety
 * `path` must be a valid C string; `out` a valid pointer.
 */
enum MpStatus mp_experiment_load(const char *path, struct MpExperiment **out);

/**
 * Override the output directory.
 *
 * # Safety
 * `exp` must come from this library; `dir` must be a valid C string.
 */
enum MpStatus mp_experiment_set_out_dir(struct MpExperiment *exp, const char *dir);

/**
 * The effective config as JSON.
 *
 * # Safety
 * `exp` must come from this library; `out` a valid pointer.
 */
enum MpStatus mp_experiment_to_json(const struct MpExperiment *exp, char **out);

/**
 * Run the whole experiment (pretraining, every method and seed,
 * evaluation, probes) and return the aggregated report.
 *
 * # Safety
 * `exp` must come from this library; `out` a valid pointer.
 */
enum MpStatus mp_experiment_run(const struct MpExperiment *exp, struct MpReport **out);

/**
 * # Safety
 * `exp` must be null or come from this library, freed once.
 */
void mp_experiment_free(struct MpExperiment *exp);

/**
 * Render a report.
 *
 * # Safety
 * `report` must come from this library; `out` a valid pointer.
 */
enum MpStatus mp_report_render(const struct MpReport *report,
                               enum MpReportFormat format,
                               char **out);

/**
 * Mean and population std of one report cell. `stage` is a stage number
 * or "mean".
 *
 * # Safety
 * Pointers must be valid; strings valid C strings.
 */
enum MpStatus mp_report_cell(const struct MpReport *report,
                             const char *method,
                             enum MpRegime regime,
                             bool constrained,
                             const char *stage,
                             double *mean,
                             double *std);

/**
 * # Safety
 * `report` must be null or come from this library, freed once.
 */
void mp_report_free(struct MpReport *report);

/**
 * Load a backbone checkpoint directory; the result is frozen.
 *
 * # Safety
 * `dir` must be a valid C string; `out` a valid pointer.
 */
enum MpStatus mp_backbone_load(const char *dir, struct MpBackbone **out);

/**
 * Model width, or 0 for a null handle.
 *
 * # Safety
 * `b` must be null or come from this library.
 */
size_t mp_backbone_d_model(const struct MpBackbone *b);

/**
 * # Safety
 * `b` must be null or come from this library, freed once.
 */
void mp_backbone_free(struct MpBackbone *b);

/**
 * Load a label-prompt store checkpoint saved against `backbone`.
 *
 * # Safety
 * Pointers must be valid; `dir` a valid C string.
 */
enum MpStatus mp_store_load(const char *dir,
                            const struct MpBackbone *backbone,
                            struct MpPromptStore **out);

/**
 * Number of labels in the store, or 0 for a null handle.
 *
 * # Safety
 * `s` must be null or come from this library.
 */
size_t mp_store_len(const struct MpPromptStore *s);

/**
 * Name of the `i`-th label (insertion order) as a new string.
 *
 * # Safety
 * Pointers must be valid.
 */
enum MpStatus mp_store_label(const struct MpPromptStore *s, size_t i, char **out);

/**
 * Predict the target for `input` with the prompts of `labels` composed in
 * canonical order, optionally constraining decoding to well-formed targets
 * over those labels.
 *
 * # Safety
 * Pointers must be valid; `labels` must point to `n_labels` C strings.
 */
enum MpStatus mp_store_predict(const struct MpPromptStore *store,
                               const struct MpBackbone *backbone,
                               enum MpTaskKind task_kind,
                               const char *const *labels,
                               size_t n_labels,
                               const char *input,
                               bool constrained,
                               char **out);

/**
 * # Safety
 * `s` must be null or come from this library, freed once.
 */
void mp_store_free(struct MpPromptStore *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MODPROMPT_H */
