#ifndef SLEEPSTATE_H
#define SLEEPSTATE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum SsStatus {
  SS_STATUS_OK = 0,
  SS_STATUS_NULL_POINTER = 1,
  SS_STATUS_INVALID_ARGUMENT = 2,
  SS_STATUS_IO = 3,
  SS_STATUS_NOT_FOUND = 4,
  SS_STATUS_PARSE = 5,
  SS_STATUS_CONFIG = 6,
  SS_STATUS_INVALID_DATA = 7,
  SS_STATUS_PANIC = 8,
} SsStatus;

typedef enum SsStat {
  SS_STAT_MEAN = 0,
  SS_STAT_MAX = 1,
  SS_STAT_MIN = 2,
  SS_STAT_STD = 3,
  SS_STAT_TOTAL_VARIATION = 4,
} SsStat;

typedef enum SsEventClass {
  SS_EVENT_CLASS_ONSET = 0,
  SS_EVENT_CLASS_WAKEUP = 1,
} SsEventClass;

// Opaque list of scored events.
typedef struct SsEventList SsEventList;

// Opaque list of ground-truth events.
typedef struct SsGroundTruth SsGroundTruth;

// Opaque trained classifier.
typedef struct SsModel SsModel;

// Opaque set of series read from a series CSV.
typedef struct SsSeriesSet SsSeriesSet;

// Rule-detector parameters; obtain defaults from [`ss_detector_config_default`].
typedef struct SsDetectorConfig {
  double angle_change_threshold_deg;
  uint32_t smoothing_window_min;
  uint32_t min_window_min;
  uint32_t max_interruption_min;
  double nonwear_std_threshold_deg;
  uint32_t nonwear_min_duration_min;
  uint32_t night_boundary_hour;
} SsDetectorConfig;

// One scored event; its series id is read with [`ss_event_list_series_id`].
typedef struct SsEvent {
  uint64_t step;
  enum SsEventClass event_class;
  double confidence;
} SsEvent;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *ss_version(void);

// Message of the last failing call on this thread, or an empty string.
// The pointer stays valid until the next failing call on this thread.
const char *ss_last_error_message(void);

// Trailing-window statistic of `x[0..n]` written to `out[0..n]`.
//
// # Safety
// `x` and `out` must each point to `n` valid doubles (they may be NULL when
// `n` is 0).
enum SsStatus ss_rolling_stat(const double *x,
                              size_t n,
                              size_t window,
                              enum SsStat stat,
                              double *out);

// Reads a series CSV into a new handle stored in `*out`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum SsStatus ss_series_set_read_csv(const char *path, struct SsSeriesSet **out);

// Number of series in the set (0 for NULL).
//
// # Safety
// `set` must be NULL or a live handle.
size_t ss_series_set_len(const struct SsSeriesSet *set);

// Id of series `index`, owned by the set; NULL when out of range.
//
// # Safety
// `set` must be NULL or a live handle.
const char *ss_series_set_series_id(const struct SsSeriesSet *set, size_t index);

// Number of samples in series `index`, or 0 when out of range.
//
// # Safety
// `set` must be NULL or a live handle.
size_t ss_series_set_series_len(const struct SsSeriesSet *set, size_t index);

// # Safety
// `set` must be NULL or a handle not yet freed.
void ss_series_set_free(struct SsSeriesSet *set);

struct SsDetectorConfig ss_detector_config_default(void);

// Runs the rule detector on every series; `config` may be NULL for defaults.
//
// # Safety
// `set` must be a live handle, `config` NULL or valid, `out` valid.
enum SsStatus ss_detect(const struct SsSeriesSet *set,
                        const struct SsDetectorConfig *config,
                        struct SsEventList **out);

// Reads a predictions CSV.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum SsStatus ss_event_list_read_csv(const char *path, struct SsEventList **out);

// Writes the list as a predictions CSV.
//
// # Safety
// `list` must be a live handle and `path` a NUL-terminated string.
enum SsStatus ss_event_list_write_csv(const struct SsEventList *list, const char *path);

// # Safety
// `list` must be NULL or a live handle.
size_t ss_event_list_len(const struct SsEventList *list);

// Copies event `index` into `*out`.
//
// # Safety
// `list` must be a live handle and `out` a valid pointer.
enum SsStatus ss_event_list_get(const struct SsEventList *list, size_t index, struct SsEvent *out);

// Series id of event `index`, owned by the list; NULL when out of range.
//
// # Safety
// `list` must be NULL or a live handle.
const char *ss_event_list_series_id(const struct SsEventList *list, size_t index);

// # Safety
// `list` must be NULL or a handle not yet freed.
void ss_event_list_free(struct SsEventList *list);

// Reads a ground-truth events CSV; unlabeled nights are skipped.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum SsStatus ss_ground_truth_read_csv(const char *path, struct SsGroundTruth **out);

// # Safety
// `gt` must be NULL or a live handle.
size_t ss_ground_truth_len(const struct SsGroundTruth *gt);

// # Safety
// `gt` must be NULL or a handle not yet freed.
void ss_ground_truth_free(struct SsGroundTruth *gt);

// Event detection average precision of `preds` against `gt`.
//
// `tolerances` lists `n_tolerances` strictly increasing step tolerances;
// pass NULL and 0 for the default set.
//
// # Safety
// Handles must be live, `tolerances` must hold `n_tolerances` values when
// non-NULL, and `out_mean_ap` must be valid.
enum SsStatus ss_score(const struct SsEventList *preds,
                       const struct SsGroundTruth *gt,
                       const uint64_t *tolerances,
                       size_t n_tolerances,
                       double *out_mean_ap);

// Loads a model file written by `sleepstate train`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum SsStatus ss_model_load(const char *path, struct SsModel **out);

// Number of feature columns the model expects (0 for NULL).
//
// # Safety
// `model` must be NULL or a live handle.
size_t ss_model_n_features(const struct SsModel *model);

// Per-step sleep probabilities for series `index` of `set`, computing the
// model's feature columns from the raw signal. `out_len` must equal the
// series length.
//
// # Safety
// Handles must be live and `out` must point to `out_len` doubles.
enum SsStatus ss_model_predict(const struct SsModel *model,
                               const struct SsSeriesSet *set,
                               size_t index,
                               double *out,
                               size_t out_len);

// # Safety
// `model` must be NULL or a handle not yet freed.
void ss_model_free(struct SsModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SLEEPSTATE_H */
