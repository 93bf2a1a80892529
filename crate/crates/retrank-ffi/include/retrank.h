/* C interface to the retrank cooperative retriever/ranker trainer. */

#pragma once

/* Generated with cbindgen:0.29.4 */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Status code of every fallible call.
typedef enum RrStatus {
  RR_STATUS_OK = 0,
  RR_STATUS_NULL_ARGUMENT = 1,
  RR_STATUS_INVALID_ARGUMENT = 2,
  RR_STATUS_UTF8 = 3,
  RR_STATUS_PARSE = 4,
  RR_STATUS_DATA = 5,
  RR_STATUS_NUMERIC = 6,
  RR_STATUS_IO = 7,
  RR_STATUS_INTERNAL = 8,
} RrStatus;

// Opaque filtered interaction data.
typedef struct RrDataset RrDataset;

// Opaque scorer parameters (retriever or ranker).
typedef struct RrModel RrModel;

// Aggregate metrics of one evaluation: all three pipelines at one cutoff.
typedef struct RrMetrics {
  double retriever_ndcg;
  double retriever_recall;
  double retriever_mrr;
  double ranker_ndcg;
  double ranker_recall;
  double ranker_mrr;
  double two_stage_ndcg;
  double two_stage_recall;
  double two_stage_mrr;
  uintptr_t num_cases;
} RrMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *rr_version(void);

// Message of the most recent failure on this thread, or null if none.
// The pointer stays valid until the next failing call on the same thread.
const char *rr_last_error_message(void);

// Ingest a tab-separated interaction log (`user<TAB>item<TAB>timestamp`
// per line, `#` comments). On success `*out` owns the dataset.
//
// # Safety
// `path` must be a valid NUL-terminated string and `out` a valid pointer.
enum RrStatus rr_dataset_ingest(const char *path,
                                uintptr_t min_interactions,
                                uintptr_t max_seq_len,
                                struct RrDataset **out);

// Generate a synthetic latent-factor dataset.
//
// # Safety
// `out` must be a valid pointer.
enum RrStatus rr_dataset_synthetic(uintptr_t num_users,
                                   uintptr_t num_items,
                                   uintptr_t latent_dim,
                                   uintptr_t seq_len,
                                   double temperature,
                                   double curvature,
                                   uint64_t seed,
                                   uintptr_t min_interactions,
                                   uintptr_t max_seq_len,
                                   struct RrDataset **out);

// # Safety
// `ds` must be a live handle from this library or null.
uintptr_t rr_dataset_num_users(const struct RrDataset *ds);

// # Safety
// `ds` must be a live handle from this library or null.
uintptr_t rr_dataset_num_items(const struct RrDataset *ds);

// # Safety
// `ds` must be a live handle from this library or null.
uintptr_t rr_dataset_num_interactions(const struct RrDataset *ds);

// # Safety
// `ds` must be a handle returned by this library, freed at most once.
void rr_dataset_free(struct RrDataset *ds);

// Train on a dataset. `config_text` holds the same flat `key = value`
// lines the CLI accepts (trainer.*, sampler.*, strategy.*, eval.*, and a
// seed list whose first entry is used); data-source keys are ignored
// because the dataset handle wins. Pass null for an all-defaults
// cooperative run. On success the two trained models are returned through
// `out_retriever` / `out_ranker`.
//
// # Safety
// Pointers must be valid; `config_text` null or NUL-terminated.
enum RrStatus rr_train(const struct RrDataset *ds,
                       const char *config_text,
                       struct RrModel **out_retriever,
                       struct RrModel **out_ranker);

// Model kind: 0 retriever, 1 ranker, -1 for null.
//
// # Safety
// `model` must be a live handle from this library or null.
int32_t rr_model_kind(const struct RrModel *model);

// # Safety
// `model` must be a live handle from this library or null.
uintptr_t rr_model_num_items(const struct RrModel *model);

// Write the model to the versioned binary checkpoint format.
//
// # Safety
// `model` must be a live handle; `path` a valid string.
enum RrStatus rr_model_save(const struct RrModel *model, const char *path);

// Load a checkpoint written by [`rr_model_save`] or the CLI.
//
// # Safety
// `path` must be a valid string and `out` a valid pointer.
enum RrStatus rr_model_load(const char *path, struct RrModel **out);

// # Safety
// `model` must be a handle returned by this library, freed at most once.
void rr_model_free(struct RrModel *model);

// Evaluate a retriever/ranker pair on a dataset's held-out cases.
//
// # Safety
// All handles must be live and `out` a valid pointer.
enum RrStatus rr_evaluate(const struct RrDataset *ds,
                          const struct RrModel *retriever,
                          const struct RrModel *ranker,
                          uintptr_t cutoff,
                          uintptr_t retrieve_k,
                          bool exclude_interacted,
                          struct RrMetrics *out);

// Sampled log-softmax over corrected logits (see the core estimators).
// Returns NaN for a null array with nonzero length.
//
// # Safety
// `sample_corrected` must point to `len` doubles (or be null with len 0).
double rr_sampled_log_softmax(double positive_corrected,
                              const double *sample_corrected,
                              uintptr_t len);

// Sampled KL divergence between teacher and student corrected logits over
// one shared sample set.
//
// # Safety
// Both arrays must hold `len` doubles; `out` must be valid.
enum RrStatus rr_sampled_kl(const double *ranker_corrected,
                            const double *retriever_corrected,
                            uintptr_t len,
                            double *out);

// Entropy form of the sampled KL for samples drawn from the retriever's
// softmax: `log(len) - H(softmax(score_diffs))`.
//
// # Safety
// `score_diffs` must hold `len` doubles; `out` must be valid.
enum RrStatus rr_entropy_form_kl(const double *score_diffs, uintptr_t len, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus
