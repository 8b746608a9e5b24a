#ifndef POINTLOC_H
#define POINTLOC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PlStatus {
  PL_STATUS_OK = 0,
  PL_STATUS_NULL_ARGUMENT = 1,
  PL_STATUS_INVALID_ARGUMENT = 2,
  PL_STATUS_IO = 3,
  PL_STATUS_PARSE = 4,
  PL_STATUS_UNKNOWN_QUERY = 5,
  PL_STATUS_INSUFFICIENT_MATCHES = 6,
  PL_STATUS_NO_SOLUTION = 7,
  PL_STATUS_SAMPLING_EXHAUSTED = 8,
  PL_STATUS_MISSING_FOCAL = 9,
  PL_STATUS_PANIC = 10,
} PlStatus;

typedef enum PlMode {
  PL_MODE_BASIC = 0,
  PL_MODE_ADVANCED = 1,
} PlMode;

typedef enum PlSolver {
  PL_SOLVER_AUTO = 0,
  PL_SOLVER_P3P = 1,
  PL_SOLVER_P4PF = 2,
  PL_SOLVER_BOTH = 3,
} PlSolver;

/**
 * A loaded model with its index and the dataset's queries.
 */
typedef struct PlDataset PlDataset;

typedef struct PlEstimate PlEstimate;

typedef struct PlQuery PlQuery;

/**
 * World-to-camera rotation (row-major), camera center and focal length in
 * pixels. The camera looks along +Z with +Y down.
 */
typedef struct PlPose {
  double rotation[9];
  double center[3];
  double focal_px;
} PlPose;

typedef struct PlOptions {
  enum PlMode mode;
  enum PlSolver solver;
  /**
   * Used only when `use_seed` is true; otherwise runs are seeded from
   * system entropy.
   */
  uint64_t seed;
  bool use_seed;
} PlOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *pl_version(void);

/**
 * Message of the calling thread's last failure, or NULL. Valid until the
 * next failing call on the same thread.
 */
const char *pl_last_error(void);

/**
 * Loads a dataset directory (`bundle.out`, `list.txt`, `keys/`,
 * `queries.txt`) and builds the descriptor index with default settings.
 *
 * # Safety
 * `dir` must be a NUL-terminated string and `out` a valid pointer.
 */
enum PlStatus pl_dataset_open(const char *dir, struct PlDataset **out);

/**
 * # Safety
 * `ds` must come from `pl_dataset_open` and not be used afterwards.
 */
void pl_dataset_free(struct PlDataset *ds);

/**
 * # Safety
 * `ds` must be a valid handle or NULL.
 */
size_t pl_dataset_query_count(const struct PlDataset *ds);

/**
 * Name of query `i`, owned by the dataset; NULL when out of range.
 *
 * # Safety
 * `ds` must be a valid handle or NULL.
 */
const char *pl_dataset_query_name(const struct PlDataset *ds, size_t i);

/**
 * Reference pose of query `i` from the reconstruction.
 *
 * # Safety
 * `ds` must be a valid handle and `out` a valid pointer.
 */
enum PlStatus pl_dataset_golden(const struct PlDataset *ds, size_t i, struct PlPose *out);

/**
 * Copies query `i` of the dataset into a new handle.
 *
 * # Safety
 * `ds` must be a valid handle and `out` a valid pointer.
 */
enum PlStatus pl_dataset_query(const struct PlDataset *ds, size_t i, struct PlQuery **out);

/**
 * Reads a query image's features from a keyfile. `focal_px <= 0` means
 * the focal length is unknown.
 *
 * # Safety
 * `name` and `keyfile` must be NUL-terminated strings and `out` valid.
 */
enum PlStatus pl_query_from_keyfile(const char *name,
                                    const char *keyfile,
                                    uint32_t width,
                                    uint32_t height,
                                    double focal_px,
                                    struct PlQuery **out);

/**
 * # Safety
 * `q` must come from this library and not be used afterwards.
 */
void pl_query_free(struct PlQuery *q);

struct PlOptions pl_options_default(void);

/**
 * Localizes `query` against the dataset's model. `options` may be NULL
 * for defaults.
 *
 * # Safety
 * Handles must be valid; `out` must be a valid pointer.
 */
enum PlStatus pl_localize(const struct PlDataset *ds,
                          const struct PlQuery *query,
                          const struct PlOptions *options,
                          struct PlEstimate **out);

/**
 * # Safety
 * `e` must come from `pl_localize` and not be used afterwards.
 */
void pl_estimate_free(struct PlEstimate *e);

/**
 * # Safety
 * `e` must be a valid handle and `out` a valid pointer.
 */
enum PlStatus pl_estimate_pose(const struct PlEstimate *e, struct PlPose *out);

/**
 * # Safety
 * `e` must be a valid handle or NULL.
 */
size_t pl_estimate_fitted_count(const struct PlEstimate *e);

/**
 * Coverage quality in `[0, 1]`; NaN for a NULL handle.
 *
 * # Safety
 * `e` must be a valid handle or NULL.
 */
double pl_estimate_quality(const struct PlEstimate *e);

/**
 * # Safety
 * `e` must be a valid handle or NULL.
 */
size_t pl_estimate_iterations(const struct PlEstimate *e);

/**
 * # Safety
 * `e` must be a valid handle or NULL.
 */
bool pl_estimate_used_backmatching(const struct PlEstimate *e);

/**
 * Writes the model point cloud to `dir/model.ply` and the viewer files for
 * the estimate into `dir/<query stem>/`.
 *
 * # Safety
 * Handles must be valid and `dir` a NUL-terminated string.
 */
enum PlStatus pl_export(const struct PlDataset *ds,
                        const struct PlQuery *query,
                        const struct PlEstimate *estimate,
                        const char *dir);

/**
 * Co-occurrence acceptance probability; NaN for invalid arguments.
 */
double pl_accept_probability(size_t inter, size_t prev_inter, size_t candidate_size, double k);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* POINTLOC_H */
