#ifndef GNNMOE_H
#define GNNMOE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum GnnmoePropagation {
  GNNMOE_PROPAGATION_GCN = 0,
  GNNMOE_PROPAGATION_SAGE = 1,
  GNNMOE_PROPAGATION_GAT = 2,
} GnnmoePropagation;

typedef enum GnnmoeStatus {
  GNNMOE_STATUS_OK = 0,
  GNNMOE_STATUS_NULL_POINTER = 1,
  GNNMOE_STATUS_INVALID_ARGUMENT = 2,
  GNNMOE_STATUS_DIMENSION = 3,
  GNNMOE_STATUS_DOMAIN = 4,
  GNNMOE_STATUS_IO = 5,
  GNNMOE_STATUS_FORMAT = 6,
  GNNMOE_STATUS_NON_FINITE = 7,
  GNNMOE_STATUS_BUFFER_TOO_SMALL = 8,
  GNNMOE_STATUS_PANIC = 9,
} GnnmoeStatus;

/**
 * Opaque graph dataset.
 */
typedef struct GnnmoeDataset GnnmoeDataset;

/**
 * Opaque trained model with its final accuracies.
 */
typedef struct GnnmoeModel GnnmoeModel;

/**
 * Training options; start from [`gnnmoe_train_options_default`].
 */
typedef struct GnnmoeTrainOptions {
  uintptr_t hidden;
  uintptr_t blocks;
  enum GnnmoePropagation propagation;
  double learning_rate;
  double weight_decay;
  double dropout;
  /**
   * Routing-entropy coefficient.
   */
  double lambda;
  uintptr_t max_epochs;
  uintptr_t patience;
  /**
   * Seeds initialization, training noise and, absent stored splits, the split.
   */
  uint64_t seed;
} GnnmoeTrainOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *gnnmoe_last_error(void);

struct GnnmoeTrainOptions gnnmoe_train_options_default(void);

/**
 * Loads a dataset directory (`meta.json`, `edges.tsv`, `features.bin`,
 * `labels.tsv`, optional `splits.json`).
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum GnnmoeStatus gnnmoe_dataset_load(const char *path, struct GnnmoeDataset **out);

/**
 * Two-parameter stochastic block model with balanced classes.
 *
 * # Safety
 * `out` must be writable.
 */
enum GnnmoeStatus gnnmoe_dataset_generate_sbm(uintptr_t nodes,
                                              uintptr_t classes,
                                              double p_in,
                                              double p_out,
                                              uintptr_t feature_dim,
                                              double noise,
                                              uint64_t seed,
                                              struct GnnmoeDataset **out);

/**
 * Number of nodes, or 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or a live dataset handle.
 */
uintptr_t gnnmoe_dataset_num_nodes(const struct GnnmoeDataset *ds);

/**
 * Number of classes, or 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or a live dataset handle.
 */
uintptr_t gnnmoe_dataset_num_classes(const struct GnnmoeDataset *ds);

/**
 * # Safety
 * `ds` must be null or a handle not yet freed.
 */
void gnnmoe_dataset_free(struct GnnmoeDataset *ds);

/**
 * Trains on the stored split for `options.seed` if the dataset came from a
 * directory with one, otherwise on a stratified split drawn from the seed.
 *
 * # Safety
 * `ds` must be a live dataset handle, `options` readable, `out` writable.
 */
enum GnnmoeStatus gnnmoe_train(const struct GnnmoeDataset *ds,
                               const struct GnnmoeTrainOptions *options,
                               struct GnnmoeModel **out);

/**
 * Train, validation and test accuracy of the selected parameters. Any
 * output pointer may be null.
 *
 * # Safety
 * `model` must be a live model handle; non-null outputs must be writable.
 */
enum GnnmoeStatus gnnmoe_model_accuracy(const struct GnnmoeModel *model,
                                        double *train_acc,
                                        double *val_acc,
                                        double *test_acc);

/**
 * 1-based epoch whose parameters were kept, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live model handle.
 */
uintptr_t gnnmoe_model_best_epoch(const struct GnnmoeModel *model);

/**
 * Writes the mean routing entropy of each mixture block into `out`.
 * `*len` holds the capacity on entry and the block count on return; with
 * too small a buffer nothing is written and `BufferTooSmall` is returned.
 *
 * # Safety
 * `model` must be a live model handle; `len` readable and writable; `out`
 * writable for `*len` doubles.
 */
enum GnnmoeStatus gnnmoe_model_routing_entropy(const struct GnnmoeModel *model,
                                               double *out,
                                               uintptr_t *len);

/**
 * Eval-mode predicted class of every node of `ds` into `out`, which must
 * hold `gnnmoe_dataset_num_nodes(ds)` entries.
 *
 * # Safety
 * Handles must be live; `out` writable for `len` entries.
 */
enum GnnmoeStatus gnnmoe_model_predict(const struct GnnmoeModel *model,
                                       const struct GnnmoeDataset *ds,
                                       uintptr_t *out,
                                       uintptr_t len);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void gnnmoe_model_free(struct GnnmoeModel *model);

/**
 * Closed-form solution of the entropy-regularized, KL-damped routing step
 * over `m` experts: `out ∝ exp((ln base + step·gains) / (1 − step·coeff))`.
 *
 * # Safety
 * `base`, `gains` readable and `out` writable for `m` doubles.
 */
enum GnnmoeStatus gnnmoe_mirror_descent_update(uintptr_t m,
                                               const double *base,
                                               const double *gains,
                                               double step,
                                               double coeff,
                                               double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GNNMOE_H */
