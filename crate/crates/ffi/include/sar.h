#ifndef SAR_H
#define SAR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Graph families accepted by [`sar_schedule_build`].
 */
typedef enum SarGraphKind {
  SAR_GRAPH_KIND_ORIGINAL_AR = 0,
  SAR_GRAPH_KIND_BINARY_SEARCH = 1,
  SAR_GRAPH_KIND_THREE_STAGE = 2,
} SarGraphKind;

/**
 * Metric selector for [`sar_metric`].
 */
typedef enum SarMetric {
  SAR_METRIC_MPJAE = 0,
  SAR_METRIC_NPSS = 1,
  SAR_METRIC_NEIGHBOR_GAP = 2,
} SarMetric;

/**
 * Result codes.
 */
typedef enum SarStatus {
  SAR_STATUS_OK = 0,
  SAR_STATUS_INVALID_INPUT = 1,
  SAR_STATUS_EMPTY_GRAPH = 2,
  SAR_STATUS_CYCLE = 3,
  SAR_STATUS_INVALID_MASK = 4,
  SAR_STATUS_UNDEFINED_METRIC = 5,
  SAR_STATUS_STATE = 6,
  SAR_STATUS_PARSE = 7,
  SAR_STATUS_IO = 8,
  SAR_STATUS_INTERNAL = 9,
  SAR_STATUS_NULL_POINTER = 10,
  SAR_STATUS_BUFFER_TOO_SMALL = 11,
  SAR_STATUS_PANIC = 12,
} SarStatus;

/**
 * A trained or freshly initialized model.
 */
typedef struct SarModel SarModel;

/**
 * A generation schedule together with its attention masks.
 */
typedef struct SarSchedule SarSchedule;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (NUL
 * terminated, truncated to `cap`). Returns the full message length in bytes
 * excluding the terminator.
 *
 * # Safety
 * `buf` must be valid for `cap` bytes or null.
 */
size_t sar_last_error(char *buf, size_t cap);

/**
 * Library version as a static NUL-terminated string.
 */
const char *sar_version(void);

/**
 * Builds a graph with `frames` in-between frames and orders it.
 * `keyframes` is only read for [`SarGraphKind::ThreeStage`].
 *
 * # Safety
 * `keyframes` must be valid for `n_keyframes` elements; `out` must be valid.
 */
enum SarStatus sar_schedule_build(enum SarGraphKind kind,
                                  size_t frames,
                                  const size_t *keyframes,
                                  size_t n_keyframes,
                                  struct SarSchedule **out);

/**
 * Parses and validates a schedule JSON document.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be valid.
 */
enum SarStatus sar_schedule_from_json(const char *json, struct SarSchedule **out);

/**
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void sar_schedule_free(struct SarSchedule *s);

/**
 * Number of positions N = T + 2, or 0 for a null handle.
 *
 * # Safety
 * `s` must be a valid handle or null.
 */
size_t sar_schedule_positions(const struct SarSchedule *s);

/**
 * Writes the generation order (T entries) into `out`.
 *
 * # Safety
 * `s` must be valid; `out` must be valid for `cap` elements.
 */
enum SarStatus sar_schedule_order(const struct SarSchedule *s, size_t *out, size_t cap);

/**
 * Writes the staged and smoothing masks as row-major `N × N` bytes (1 =
 * attend). Either output may be null.
 *
 * # Safety
 * `s` must be valid; non-null outputs must be valid for `cap` bytes.
 */
enum SarStatus sar_schedule_masks(const struct SarSchedule *s,
                                  uint8_t *staged,
                                  uint8_t *smoothing,
                                  size_t cap);

/**
 * Serializes the schedule to JSON. `needed` receives the byte length
 * excluding the terminator; when `cap` is too small nothing is written and
 * `BufferTooSmall` is returned.
 *
 * # Safety
 * `s` and `needed` must be valid; `buf` must be valid for `cap` bytes.
 */
enum SarStatus sar_schedule_to_json(const struct SarSchedule *s,
                                    char *buf,
                                    size_t cap,
                                    size_t *needed);

/**
 * SLERP between two poses of `joints` joints, writing `frames` in-between
 * poses to `out`.
 *
 * # Safety
 * `start`/`end` must hold `joints × 3` values; `out` must be valid for `cap`.
 */
enum SarStatus sar_slerp(const double *start,
                         const double *end,
                         size_t joints,
                         size_t frames,
                         double *out,
                         size_t cap);

/**
 * Compares two motions of `frames × joints × 3` values.
 *
 * # Safety
 * `generated` and `truth` must hold `frames × joints × 3` values; `out` valid.
 */
enum SarStatus sar_metric(enum SarMetric metric,
                          const double *generated,
                          const double *truth,
                          size_t frames,
                          size_t joints,
                          double *out);

/**
 * Neighbor L2 distance of one motion.
 *
 * # Safety
 * `motion` must hold `frames × joints × 3` values; `out` valid.
 */
enum SarStatus sar_neighbor_l2(const double *motion, size_t frames, size_t joints, double *out);

/**
 * Creates a randomly initialized model from a configuration JSON document.
 *
 * # Safety
 * `config_json` must be a NUL-terminated string; `out` valid.
 */
enum SarStatus sar_model_new(const char *config_json, uint64_t seed, struct SarModel **out);

/**
 * Loads a checkpoint (and its `.json` configuration alongside).
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` valid.
 */
enum SarStatus sar_model_load(const char *path, struct SarModel **out);

/**
 * # Safety
 * `m` must be valid; `path` a NUL-terminated string.
 */
enum SarStatus sar_model_save(const struct SarModel *m, const char *path);

/**
 * # Safety
 * `m` must come from this library and not be used afterwards.
 */
void sar_model_free(struct SarModel *m);

/**
 * Joint count of the model, or 0 for a null handle.
 *
 * # Safety
 * `m` must be a valid handle or null.
 */
size_t sar_model_joints(const struct SarModel *m);

/**
 * Number of scalar parameters, or 0 for a null handle.
 *
 * # Safety
 * `m` must be a valid handle or null.
 */
size_t sar_model_num_params(const struct SarModel *m);

/**
 * Generates the T = N − 2 in-between poses from `start` to `end`, with or
 * without the final smoothing pass.
 *
 * # Safety
 * `m`, `s` valid; `start`/`end` hold `joints × 3` values; `out` valid for
 * `cap` values.
 */
enum SarStatus sar_model_infer(const struct SarModel *m,
                               const struct SarSchedule *s,
                               const double *start,
                               const double *end,
                               bool smoothing,
                               double *out,
                               size_t cap);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SAR_H */
