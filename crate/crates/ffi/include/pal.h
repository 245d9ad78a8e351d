#ifndef PAL_H
#define PAL_H

#include <stddef.h>
#include <stdint.h>

typedef enum PalStatus {
  PAL_STATUS_OK = 0,
  PAL_STATUS_NULL_POINTER = 1,
  PAL_STATUS_INVALID_INPUT = 2,
  PAL_STATUS_NUMERICAL = 3,
  PAL_STATUS_CONFIG = 4,
  PAL_STATUS_IO = 5,
  PAL_STATUS_CHECKPOINT = 6,
  PAL_STATUS_BUFFER_TOO_SMALL = 7,
  PAL_STATUS_PANIC = 8,
} PalStatus;

/*
 Validated run configuration.
 */
typedef struct PalConfig PalConfig;

/*
 Accuracy matrix and summary metrics of a finished run.
 */
typedef struct PalReport PalReport;

/*
 Recursive ridge classifier over fixed-width features.
 */
typedef struct PalRls PalRls;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or null if it succeeded.
 The pointer stays valid until the next `pal_*` call on the same thread.
 */
const char *pal_last_error_message(void);

/*
 Creates a head with no classes and `R = I / reg`.

 # Safety
 `out` must be a valid pointer to writable storage for one handle.
 */
enum PalStatus pal_rls_new(size_t dim, double reg, struct PalRls **out);

/*
 # Safety
 `head` must be null or a handle from `pal_rls_new` not yet freed.
 */
void pal_rls_free(struct PalRls *head);

/*
 Replaces the head with the closed-form ridge fit of the first task.
 `features` is `rows × dim`; labels lie in `0..num_classes`.

 # Safety
 `features` must hold `rows * dim` doubles and `labels` `rows` entries.
 */
enum PalStatus pal_rls_fit_first(struct PalRls *head,
                                 const double *features,
                                 size_t rows,
                                 const uint32_t *labels,
                                 size_t num_classes);

/*
 Adds `count` zero-initialized class columns.

 # Safety
 `head` must be a live handle.
 */
enum PalStatus pal_rls_expand(struct PalRls *head, size_t count);

/*
 Absorbs a block of labelled rows with the exact recursive update.

 # Safety
 `features` must hold `rows * dim` doubles and `labels` `rows` entries.
 */
enum PalStatus pal_rls_update(struct PalRls *head,
                              const double *features,
                              size_t rows,
                              const uint32_t *labels);

/*
 # Safety
 `head` must be a live handle; `out` must be writable.
 */
enum PalStatus pal_rls_num_classes(const struct PalRls *head, size_t *out);

/*
 Arg-max class per row into `out` (`rows` entries).

 # Safety
 `features` must hold `rows * dim` doubles and `out` room for `rows`.
 */
enum PalStatus pal_rls_predict(const struct PalRls *head,
                               const double *features,
                               size_t rows,
                               uint32_t *out);

/*
 Copies the `dim × num_classes` weight matrix into `out`. When `out_len`
 is too small nothing is copied, `*needed` is still set and
 `BufferTooSmall` is returned.

 # Safety
 `out` must hold `out_len` doubles; `needed` must be writable.
 */
enum PalStatus pal_rls_weights(const struct PalRls *head,
                               double *out,
                               size_t out_len,
                               size_t *needed);

/*
 # Safety
 `out` must be writable.
 */
enum PalStatus pal_config_default(struct PalConfig **out);

/*
 Scaled-down configuration that runs in milliseconds.

 # Safety
 `out` must be writable.
 */
enum PalStatus pal_config_small(struct PalConfig **out);

/*
 Parses and validates a TOML document (UTF-8, nul-terminated).

 # Safety
 `toml` must be a nul-terminated string; `out` must be writable.
 */
enum PalStatus pal_config_from_toml(const char *toml, struct PalConfig **out);

/*
 Sets `seeds.run_seed`.

 # Safety
 `config` must be a live handle.
 */
enum PalStatus pal_config_set_run_seed(struct PalConfig *config, uint64_t seed);

/*
 # Safety
 `config` must be null or a live handle.
 */
void pal_config_free(struct PalConfig *config);

/*
 Runs the configured method over its stream. Writes nothing to disk.

 # Safety
 `config` must be a live handle; `out` must be writable.
 */
enum PalStatus pal_run(const struct PalConfig *config, struct PalReport **out);

/*
 # Safety
 `report` must be a live handle; `out` must be writable.
 */
enum PalStatus pal_report_num_tasks(const struct PalReport *report, size_t *out);

/*
 Mean of the final accuracy row.

 # Safety
 `report` must be a live handle; `out` must be writable.
 */
enum PalStatus pal_report_acc(const struct PalReport *report, double *out);

/*
 Average forgetting. Fails with `InvalidInput` on single-task runs.

 # Safety
 `report` must be a live handle; `out` must be writable.
 */
enum PalStatus pal_report_fg(const struct PalReport *report, double *out);

/*
 Accuracy on `task` after training step `step` (both 0-based, `task <= step`).

 # Safety
 `report` must be a live handle; `out` must be writable.
 */
enum PalStatus pal_report_accuracy(const struct PalReport *report,
                                   size_t task,
                                   size_t step,
                                   double *out);

/*
 # Safety
 `report` must be null or a live handle.
 */
void pal_report_free(struct PalReport *report);

/*
 Runs the oracle suite. `seed` may be null for the built-in seed.
 `*passed` is 1 when every check passed, else 0; the status reflects only
 whether the suite could run.

 # Safety
 `seed` must be null or readable; `passed` must be writable.
 */
enum PalStatus pal_verify(const uint64_t *seed, int32_t *passed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PAL_H */
