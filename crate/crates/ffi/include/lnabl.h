#ifndef LNABL_H
#define LNABL_H

#include <stdbool.h>
#include <stdint.h>
#include <stddef.h>

/**
 * Result code of every fallible call.
 */
typedef enum LnablStatus {
  LNABL_STATUS_OK = 0,
  LNABL_STATUS_NULL_POINTER = 1,
  LNABL_STATUS_INVALID_UTF8 = 2,
  LNABL_STATUS_INVALID_ARGUMENT = 3,
  LNABL_STATUS_DIMENSION = 4,
  LNABL_STATUS_CONFIG = 5,
  LNABL_STATUS_STATE = 6,
  LNABL_STATUS_PRECONDITION = 7,
  LNABL_STATUS_SCHEDULE = 8,
  LNABL_STATUS_FORMAT = 9,
  LNABL_STATUS_IO = 10,
  LNABL_STATUS_BUFFER_TOO_SMALL = 11,
  LNABL_STATUS_DIVERGENCE = 12,
  LNABL_STATUS_PANIC = 99,
} LnablStatus;

/**
 * Site kind of a schedule event.
 */
typedef enum LnablSiteKind {
  LNABL_SITE_KIND_LN1 = 0,
  LNABL_SITE_KIND_LN1QK = 1,
  LNABL_SITE_KIND_LN1V = 2,
  LNABL_SITE_KIND_LN2 = 3,
  LNABL_SITE_KIND_LNF = 4,
} LnablSiteKind;

/**
 * Action of a schedule event.
 */
typedef enum LnablAction {
  LNABL_ACTION_FREEZE = 0,
  LNABL_ACTION_DROP_EOT = 1,
  LNABL_ACTION_DROP_BOS = 2,
  LNABL_ACTION_INTERPOLATE = 3,
} LnablAction;

/**
 * Opaque 32-bit model.
 */
typedef struct LnablModel LnablModel;

/**
 * Opaque removal schedule.
 */
typedef struct LnablSchedule LnablSchedule;

/**
 * One schedule event. `block` is -1 for the final norm; `weight` is only
 * meaningful for [`LnablAction::Interpolate`].
 */
typedef struct LnablEvent {
  uint64_t step;
  int32_t block;
  enum LnablSiteKind kind;
  enum LnablAction action;
  double weight;
} LnablEvent;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *lnabl_last_error(void);

/**
 * Freshly initialized model with the default desk configuration.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum LnablStatus lnabl_model_init_default(uint64_t seed, struct LnablModel **out);

/**
 * Loads a checkpoint, converting 64-bit checkpoints to 32-bit.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid handle slot.
 */
enum LnablStatus lnabl_model_load(const char *path, struct LnablModel **out);

/**
 * Writes `model` as a 32-bit checkpoint.
 *
 * # Safety
 * `model` must be a live handle and `path` a NUL-terminated string.
 */
enum LnablStatus lnabl_model_save(const struct LnablModel *model, const char *path);

/**
 * Releases a model handle. NULL is ignored.
 *
 * # Safety
 * `model` must be NULL or a handle not yet freed.
 */
void lnabl_model_free(struct LnablModel *model);

/**
 * Vocabulary size, or 0 for a NULL handle.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
uintptr_t lnabl_model_vocab_size(const struct LnablModel *model);

/**
 * Maximum sequence length, or 0 for a NULL handle.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
uintptr_t lnabl_model_context_length(const struct LnablModel *model);

/**
 * Whether the forward pass executes no normalization operation.
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum LnablStatus lnabl_model_is_norm_free(const struct LnablModel *model, bool *out);

/**
 * Logits of one sequence, row-major `[len × vocab]`, written to `logits`.
 *
 * Position 0 is flagged BOS and every EOT token is flagged EOT.
 *
 * # Safety
 * `tokens` must point to `len` readable values and `logits` to `capacity`
 * writable floats.
 */
enum LnablStatus lnabl_model_forward(const struct LnablModel *model,
                                     const uint16_t *tokens,
                                     uintptr_t len,
                                     float *logits,
                                     uintptr_t capacity);

/**
 * Splits every shared attention norm. Writes the number of splits to `out`
 * when it is not NULL.
 *
 * # Safety
 * `model` must be a live handle; `out` must be NULL or writable.
 */
enum LnablStatus lnabl_model_split_all(struct LnablModel *model, uintptr_t *out);

/**
 * Folds every frozen norm into the adjacent linear maps, producing a new
 * norm-free model. Fails with `Precondition` unless every site is frozen
 * with both specials dropped.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid handle slot.
 */
enum LnablStatus lnabl_model_export(const struct LnablModel *model, struct LnablModel **out);

/**
 * One of the bundled schedules, `"v1"` to `"v5"`.
 *
 * # Safety
 * `name` must be a NUL-terminated string and `out` a valid handle slot.
 */
enum LnablStatus lnabl_schedule_bundled(const char *name, struct LnablSchedule **out);

/**
 * Parses schedule text in the tab-separated format.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a valid handle slot.
 */
enum LnablStatus lnabl_schedule_parse(const char *text, struct LnablSchedule **out);

/**
 * Releases a schedule handle. NULL is ignored.
 *
 * # Safety
 * `schedule` must be NULL or a handle not yet freed.
 */
void lnabl_schedule_free(struct LnablSchedule *schedule);

/**
 * Number of events, or 0 for a NULL handle.
 *
 * # Safety
 * `schedule` must be NULL or a live handle.
 */
uintptr_t lnabl_schedule_len(const struct LnablSchedule *schedule);

/**
 * Rescales event steps by `factor` in place.
 *
 * # Safety
 * `schedule` must be a live handle.
 */
enum LnablStatus lnabl_schedule_rescale(struct LnablSchedule *schedule, double factor);

/**
 * Event `index` in execution order.
 *
 * # Safety
 * `schedule` must be a live handle and `out` writable.
 */
enum LnablStatus lnabl_schedule_event(const struct LnablSchedule *schedule,
                                      uintptr_t index,
                                      struct LnablEvent *out);

/**
 * Number of events scheduled exactly at `step`.
 *
 * # Safety
 * `schedule` must be NULL or a live handle.
 */
uintptr_t lnabl_schedule_count_at(const struct LnablSchedule *schedule, uint64_t step);

/**
 * Learning rate at `step` under the default warmup plus cosine schedule.
 */
double lnabl_lr_at(uint64_t step);

/**
 * Learning rate at `step` for explicit parameters. `cosine` selects warmup
 * plus cosine decay; otherwise the rate is constant at `base_lr`. Returns
 * NaN for invalid parameters.
 */
double lnabl_lr_at_with(uint64_t step,
                        bool cosine,
                        double base_lr,
                        double min_lr,
                        uint64_t warmup_steps,
                        uint64_t decay_end_step);

/**
 * Tokens consumed per optimizer step.
 */
uint64_t lnabl_tokens_per_step(uint64_t micro_batch_size, uint64_t seq_len, uint64_t grad_accum);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LNABL_H */
