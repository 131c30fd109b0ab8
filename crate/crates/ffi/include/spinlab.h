#ifndef SPINLAB_H
#define SPINLAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by every entry point.
 */
typedef enum SpinStatus {
  SPIN_STATUS_OK = 0,
  SPIN_STATUS_NULL_POINTER = 1,
  SPIN_STATUS_INVALID_UTF8 = 2,
  SPIN_STATUS_BUFFER_TOO_SMALL = 3,
  SPIN_STATUS_DOMAIN = 4,
  SPIN_STATUS_CONFIG = 5,
  SPIN_STATUS_ARGUMENT = 6,
  SPIN_STATUS_CAPACITY = 7,
  SPIN_STATUS_RUN = 8,
  SPIN_STATUS_PARSE = 9,
  SPIN_STATUS_IO = 10,
  SPIN_STATUS_PANIC = 11,
} SpinStatus;

/**
 * Opaque policy handle: a sequence-level table or token-level conditionals.
 */
typedef struct SpinPolicy SpinPolicy;

/**
 * Opaque handle to a finished (or failed) run record.
 */
typedef struct SpinRun SpinRun;

/**
 * One row of a run's metrics table.
 */
typedef struct SpinIterationMetrics {
  size_t iteration;
  double initial_train_loss;
  double mean_train_loss;
  double kl_data_model;
  double kl_model_base;
  double wall_seconds;
} SpinIterationMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Last error message on this thread, or null when none has been recorded.
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *spinlab_last_error_message(void);

/**
 * Loads a tabular, token or sampler checkpoint. Sampler checkpoints load as
 * their token-level policy.
 *
 * # Safety
 * `path` must be a nul-terminated string and `out_policy` a valid pointer.
 */
enum SpinStatus spinlab_policy_load(const char *path, struct SpinPolicy **out_policy);

/**
 * Writes the policy as a checkpoint file.
 *
 * # Safety
 * `policy` must come from this library and `path` be nul-terminated.
 */
enum SpinStatus spinlab_policy_save(const struct SpinPolicy *policy, const char *path);

/**
 * # Safety
 * `policy` must come from this library (or be null) and not be used afterwards.
 */
void spinlab_policy_free(struct SpinPolicy *policy);

/**
 * Number of prompts, answers and trainable parameters of `policy`.
 *
 * # Safety
 * `policy` must come from this library; each out pointer may be null.
 */
enum SpinStatus spinlab_policy_shape(const struct SpinPolicy *policy,
                                     size_t *num_prompts,
                                     size_t *num_answers,
                                     size_t *num_params);

/**
 * `log π(y|x)` in nats.
 *
 * # Safety
 * `policy` must come from this library and `out_value` be valid.
 */
enum SpinStatus spinlab_policy_log_prob(const struct SpinPolicy *policy,
                                        size_t prompt,
                                        size_t answer,
                                        double *out_value);

/**
 * Copies `π(·|x)` into `buf`, which must hold at least the number of answers.
 *
 * # Safety
 * `buf` must be valid for `len` writes.
 */
enum SpinStatus spinlab_policy_probabilities(const struct SpinPolicy *policy,
                                             size_t prompt,
                                             double *buf,
                                             size_t len);

/**
 * `KL(p(·|x) ‖ q(·|x))` by enumeration.
 *
 * # Safety
 * Both policies must come from this library and `out_value` be valid.
 */
enum SpinStatus spinlab_kl_divergence(const struct SpinPolicy *p,
                                      const struct SpinPolicy *q,
                                      size_t prompt,
                                      double *out_value);

/**
 * Normalized `p^α q^{1-α}` as a new tabular policy.
 *
 * # Safety
 * Both policies must come from this library and `out_policy` be valid.
 */
enum SpinStatus spinlab_geometric_mixture(const struct SpinPolicy *p,
                                          const struct SpinPolicy *q,
                                          double alpha,
                                          struct SpinPolicy **out_policy);

/**
 * Mean DPO loss of `theta` against `reference` over `n` triplets, and its
 * gradient in `theta`'s parameters when `grad` is non-null.
 *
 * # Safety
 * The triplet arrays must hold `n` entries; `grad` must be null or valid
 * for `grad_len` writes.
 */
enum SpinStatus spinlab_dpo_loss(const struct SpinPolicy *theta,
                                 const struct SpinPolicy *reference,
                                 const size_t *prompts,
                                 const size_t *winners,
                                 const size_t *losers,
                                 size_t n,
                                 double beta,
                                 double *out_loss,
                                 double *grad,
                                 size_t grad_len);

/**
 * Runs the experiment described by the config file at `config_path`.
 * A non-null `out_dir` overrides the configured output directory.
 *
 * A run that starts but fails part-way returns `SPIN_STATUS_RUN` (or the
 * underlying error's code) and leaves its record on disk.
 *
 * # Safety
 * Strings must be nul-terminated and `out_run` valid.
 */
enum SpinStatus spinlab_run_experiment(const char *config_path,
                                       const char *out_dir,
                                       struct SpinRun **out_run);

/**
 * # Safety
 * `run` must come from this library (or be null) and not be used afterwards.
 */
void spinlab_run_free(struct SpinRun *run);

/**
 * Number of finished iterations and whether the run completed.
 *
 * # Safety
 * `run` must come from this library; out pointers may be null.
 */
enum SpinStatus spinlab_run_summary(const struct SpinRun *run,
                                    size_t *num_iterations,
                                    bool *complete,
                                    double *kl_data_base);

/**
 * Metrics of the `index`-th finished iteration (0-based).
 *
 * # Safety
 * `run` must come from this library and `out_metrics` be valid.
 */
enum SpinStatus spinlab_run_metrics(const struct SpinRun *run,
                                    size_t index,
                                    struct SpinIterationMetrics *out_metrics);

/**
 * Finite-difference check of the dpo, ipo, slic and subtb gradients on
 * `instances` seeded instances each. `max_rel_err` receives the four worst
 * relative errors in that order; `passed` is set when all are below 1e-5.
 *
 * # Safety
 * `max_rel_err` must be null or valid for `len` writes; `passed` must be valid.
 */
enum SpinStatus spinlab_grad_check(uint64_t seed,
                                   size_t instances,
                                   double *max_rel_err,
                                   size_t len,
                                   bool *passed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPINLAB_H */
