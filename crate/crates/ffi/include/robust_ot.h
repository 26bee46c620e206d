#ifndef ROBUST_OT_H
#define ROBUST_OT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every fallible function.
typedef enum RotStatus {
  ROT_STATUS_OK = 0,
  ROT_STATUS_NULL_POINTER = 1,
  ROT_STATUS_INVALID_ARGUMENT = 2,
  ROT_STATUS_DIMENSION_MISMATCH = 3,
  ROT_STATUS_NOT_CONVERGED = 4,
  ROT_STATUS_DIVERGED = 5,
  ROT_STATUS_IO = 6,
  ROT_STATUS_PARSE = 7,
  ROT_STATUS_NUMERICAL = 8,
  ROT_STATUS_PANIC = 9,
} RotStatus;

// Ground-metric family for [`rot_distance`].
typedef enum RotFamily {
  ROT_FAMILY_PNORM = 0,
  ROT_FAMILY_KL = 1,
  ROT_FAMILY_DS = 2,
  // Squared Euclidean cost; no adversarial metric.
  ROT_FAMILY_W22 = 3,
} RotFamily;

// Opaque discrete measure.
typedef struct RotMeasure RotMeasure;

// Opaque softmax classifier.
typedef struct RotModel RotModel;

// Solver settings for [`rot_distance`]. Start from
// [`rot_distance_config_default`] and override fields.
typedef struct RotDistanceConfig {
  enum RotFamily family;
  // Schatten exponent for the p-norm family.
  uint32_t k;
  // Regularization weight for the KL and DS families.
  double lambda_m;
  // Entropic weight of the Sinkhorn step.
  double lambda_beta;
  uint32_t sinkhorn_iters;
  // Sinkhorn early-stop tolerance; 0 runs every sweep.
  double sinkhorn_tol;
  uint32_t fw_iters;
  double gap_tol;
  // Number of feature groups; 0 disables grouping.
  uint32_t groups;
  uint64_t seed;
} RotDistanceConfig;

// Output of [`rot_distance`].
typedef struct RotDistanceResult {
  double value;
  // Final Frank–Wolfe gap; NaN for [`RotFamily::W22`].
  double gap;
  // Frank–Wolfe iterations, or Sinkhorn sweeps for [`RotFamily::W22`].
  uint32_t iterations;
  // Largest deviation of the plan's marginals from the measure weights.
  double marginal_residual;
} RotDistanceResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null if none failed.
// The pointer stays valid until the next failing call on the same thread.
const char *rot_last_error(void);

// Builds a measure from `n` row-major points of dimension `d`. A null
// `weights` gives uniform weights; otherwise `n` nonnegative weights are
// normalized to unit mass.
//
// # Safety
// `points` must hold `n * d` doubles, `weights` (if non-null) `n` doubles,
// and `out` must be a valid pointer to write the handle to.
enum RotStatus rot_measure_new(const double *points,
                               const double *weights,
                               size_t n,
                               size_t d,
                               struct RotMeasure **out);

// Number of support points of `measure`, or 0 for null.
//
// # Safety
// `measure` must be null or a live handle from [`rot_measure_new`].
size_t rot_measure_len(const struct RotMeasure *measure);

// Releases a measure. Null is ignored.
//
// # Safety
// `measure` must be null or a live handle from [`rot_measure_new`], not
// used afterwards.
void rot_measure_free(struct RotMeasure *measure);

// Defaults: p-norm with k = 1, λ_M = 1, λβ = 0.2, 1000 Sinkhorn sweeps at
// tol 1e-10, 200 Frank–Wolfe iterations with gap tol 1e-6, no grouping.
struct RotDistanceConfig rot_distance_config_default(void);

// Robust OT distance between two measures of equal dimension. If `plan` is
// non-null the `len(src) * len(tgt)` row-major transport plan is written to it.
//
// # Safety
// `src` and `tgt` must be live measure handles, `config` and `result` valid
// pointers, and `plan` null or writable for `len(src) * len(tgt)` doubles.
enum RotStatus rot_distance(const struct RotMeasure *src,
                            const struct RotMeasure *tgt,
                            const struct RotDistanceConfig *config,
                            struct RotDistanceResult *result,
                            double *plan);

// Loads a model checkpoint written by `robust-ot train`.
//
// # Safety
// `path` must be a nul-terminated string and `out` a valid pointer.
enum RotStatus rot_model_load(const char *path, struct RotModel **out);

// Writes the model's feature dimension and label count.
//
// # Safety
// `model` must be a live handle; `feature_dim` and `label_count` valid pointers.
enum RotStatus rot_model_dims(const struct RotModel *model,
                              size_t *feature_dim,
                              size_t *label_count);

// Softmax predictions for `n` row-major instances with `m` features each;
// writes `n * label_count` probabilities to `out`.
//
// # Safety
// `model` must be a live handle, `features` readable for `n * m` doubles and
// `out` writable for `n * label_count` doubles.
enum RotStatus rot_model_predict(const struct RotModel *model,
                                 const double *features,
                                 size_t n,
                                 size_t m,
                                 double *out);

// Releases a model. Null is ignored.
//
// # Safety
// `model` must be null or a live handle from [`rot_model_load`], not used afterwards.
void rot_model_free(struct RotModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ROBUST_OT_H */
