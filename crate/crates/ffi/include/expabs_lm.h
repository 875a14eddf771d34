#ifndef EXPABS_LM_H
#define EXPABS_LM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define EXPABS_MODE_FIXED 0

#define EXPABS_MODE_DYNAMIC 1

#define EXPABS_SPEEDUPS_NONE 0

#define EXPABS_SPEEDUPS_MOMENTUM 1

#define EXPABS_SPEEDUPS_FULL 2

#define EXPABS_SUPERSAB_PROSE 0

#define EXPABS_SUPERSAB_PSEUDOCODE 1

#define EXPABS_RESIDUAL_PER_OUTPUT 0

#define EXPABS_RESIDUAL_SQUARE_ROOT 1

#define EXPABS_RESIDUAL_ERROR_SUM 2

typedef enum ExpabsStatus {
  EXPABS_STATUS_OK = 0,
  EXPABS_STATUS_NULL_POINTER = 1,
  EXPABS_STATUS_INVALID_ARGUMENT = 2,
  EXPABS_STATUS_IO = 3,
  EXPABS_STATUS_TRAINING = 4,
  EXPABS_STATUS_PANIC = 5,
} ExpabsStatus;

/**
 * Opaque handle to a loaded, scaled and split dataset.
 */
typedef struct ExpabsDataset ExpabsDataset;

/**
 * Opaque network handle.
 */
typedef struct ExpabsNetwork ExpabsNetwork;

/**
 * Opaque handle to the outcome of one training run.
 */
typedef struct ExpabsTrainResult ExpabsTrainResult;

/**
 * Trainer settings. Enumerated fields take the `EXPABS_*` constants above.
 */
typedef struct ExpabsTrainerConfig {
  double mu_init;
  double mu_min;
  double mu_max;
  double alpha;
  double eta_init;
  double eta_plus;
  double eta_minus;
  double tau_init;
  double tau_guard;
  size_t m_max;
  size_t max_iterations;
  size_t patience;
  uint32_t mode;
  uint32_t speedups;
  uint32_t supersab_rule;
  uint32_t residual;
} ExpabsTrainerConfig;

/**
 * Final measures on one data part. CE and recognition rate are NaN for
 * regression data.
 */
typedef struct ExpabsMetrics {
  double e_expabs;
  double mse;
  double ce;
  double rec_rate;
} ExpabsMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL after a success.
 * The pointer stays valid until the next call into this library on the
 * same thread.
 */
const char *expabs_last_error_message(void);

/**
 * Creates a network with weights drawn uniformly from [-0.5, 0.5].
 *
 * # Safety
 * `layer_sizes` must point to `n_layers` values and `out` must be writable.
 */
enum ExpabsStatus expabs_network_new(const size_t *layer_sizes,
                                     size_t n_layers,
                                     uint64_t seed,
                                     struct ExpabsNetwork **out);

/**
 * # Safety
 * `net` must come from this library and not be used afterwards. NULL is ignored.
 */
void expabs_network_free(struct ExpabsNetwork *net);

/**
 * Number of weights including biases; 0 for NULL.
 *
 * # Safety
 * `net` must be NULL or a live handle.
 */
size_t expabs_network_weight_count(const struct ExpabsNetwork *net);

/**
 * # Safety
 * `net` must be NULL or a live handle.
 */
size_t expabs_network_input_dim(const struct ExpabsNetwork *net);

/**
 * # Safety
 * `net` must be NULL or a live handle.
 */
size_t expabs_network_output_dim(const struct ExpabsNetwork *net);

/**
 * Forward pass for one pattern.
 *
 * # Safety
 * `input` must hold `n_in` values and `output` must have room for `n_out`.
 */
enum ExpabsStatus expabs_network_forward(const struct ExpabsNetwork *net,
                                         const double *input,
                                         size_t n_in,
                                         double *output,
                                         size_t n_out);

/**
 * Per-pattern error |τ| exp(Σ e² / |τ|) for the `n` output errors in `e`.
 *
 * # Safety
 * `e` must hold `n` values and `out` must be writable.
 */
enum ExpabsStatus expabs_err_expabs(const double *e, size_t n, double tau, double *out);

/**
 * Loads a delimited file with its TOML schema, splits it 50/25/25 with
 * `split_seed` and scales it on the training part.
 *
 * # Safety
 * Both paths must be NUL-terminated strings and `out` must be writable.
 */
enum ExpabsStatus expabs_dataset_load(const char *data_path,
                                      const char *schema_path,
                                      uint64_t split_seed,
                                      struct ExpabsDataset **out);

/**
 * # Safety
 * `data` must come from this library and not be used afterwards. NULL is ignored.
 */
void expabs_dataset_free(struct ExpabsDataset *data);

/**
 * Patterns over all three parts; 0 for NULL.
 *
 * # Safety
 * `data` must be NULL or a live handle.
 */
size_t expabs_dataset_pattern_count(const struct ExpabsDataset *data);

/**
 * Input width after categorical expansion; 0 for NULL.
 *
 * # Safety
 * `data` must be NULL or a live handle.
 */
size_t expabs_dataset_input_dim(const struct ExpabsDataset *data);

/**
 * Target width (classes or regression outputs); 0 for NULL.
 *
 * # Safety
 * `data` must be NULL or a live handle.
 */
size_t expabs_dataset_output_dim(const struct ExpabsDataset *data);

struct ExpabsTrainerConfig expabs_trainer_config_default(void);

/**
 * Trains a copy of `net` on the training part of `data`, early-stopping
 * on the validation part. `net` itself is left untouched.
 *
 * # Safety
 * `net`, `data` and `cfg` must be live; `out` must be writable.
 */
enum ExpabsStatus expabs_train(const struct ExpabsNetwork *net,
                               const struct ExpabsDataset *data,
                               const struct ExpabsTrainerConfig *cfg,
                               struct ExpabsTrainResult **out);

/**
 * # Safety
 * `result` must come from this library and not be used afterwards. NULL is ignored.
 */
void expabs_result_free(struct ExpabsTrainResult *result);

/**
 * τ of the returned snapshot; NaN for NULL.
 *
 * # Safety
 * `result` must be NULL or a live handle.
 */
double expabs_result_final_tau(const struct ExpabsTrainResult *result);

/**
 * Logged iterations; 0 for NULL.
 *
 * # Safety
 * `result` must be NULL or a live handle.
 */
size_t expabs_result_iterations(const struct ExpabsTrainResult *result);

/**
 * 1 when the run ended by early stopping, 0 at the iteration cap or for NULL.
 *
 * # Safety
 * `result` must be NULL or a live handle.
 */
int32_t expabs_result_early_stopped(const struct ExpabsTrainResult *result);

/**
 * Measures of the returned snapshot on the test part.
 *
 * # Safety
 * `result` must be live and `out` writable.
 */
enum ExpabsStatus expabs_result_test_metrics(const struct ExpabsTrainResult *result,
                                             struct ExpabsMetrics *out);

/**
 * Copies the trained network into a new handle owned by the caller.
 *
 * # Safety
 * `result` must be live and `out` writable.
 */
enum ExpabsStatus expabs_result_network(const struct ExpabsTrainResult *result,
                                        struct ExpabsNetwork **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EXPABS_LM_H */
