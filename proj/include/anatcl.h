#ifndef ANATCL_H
#define ANATCL_H

/* C interface to the anatomy-aware contrastive alignment library.
 *
 * Conventions:
 *   - Every fallible function returns anatcl_status; ANATCL_OK is 0.
 *   - On failure, anatcl_last_error() returns a message describing the
 *     most recent error on the calling thread. The pointer stays valid
 *     until the next failing call on that thread.
 *   - Output strings (char**) are heap-allocated, NUL-terminated, and
 *     owned by the caller; release them with anatcl_string_free.
 *   - Handles are opaque; release them with the matching _free function.
 *     Passing NULL to a _free function is a no-op.
 *   - Configs are JSON objects. Missing fields take documented defaults,
 *     unknown fields are rejected.
 */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define ANATCL_API __declspec(dllexport)
#else
#define ANATCL_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum anatcl_status {
  ANATCL_OK = 0,
  ANATCL_INVALID_ARGUMENT = 1, /* bad config, shape mismatch, bad index */
  ANATCL_IO_ERROR = 2,         /* unreadable/unwritable path, parse failure */
  ANATCL_NUMERIC_ERROR = 3,    /* non-finite loss or degenerate numerics */
  ANATCL_CHECK_FAILED = 4,     /* a requested check ran and did not pass */
  ANATCL_INTERNAL = 5          /* unexpected failure; please report */
} anatcl_status;

/* Library version as "major.minor.patch". Static storage; do not free. */
ANATCL_API const char* anatcl_version(void);

/* Message for the last failure on this thread, or "" if none. */
ANATCL_API const char* anatcl_last_error(void);

/* Releases a string returned through a char** out-parameter. */
ANATCL_API void anatcl_string_free(char* s);

/* ---- Synthetic cohorts ---------------------------------------------- */

typedef struct anatcl_cohort anatcl_cohort;

/* Generates a cohort from a JSON config. config_json may be NULL or "{}"
 * for all defaults. Fields: M, D, n_patients, tokens_per_anatomy,
 * sentences_normal, sentences_abnormal, text_coverage, abnormal_rate,
 * text_separation_deg, vis_separation_deg, pathology_offset_scale,
 * noise_scale, n_templates, template_noise_scale, seed. */
ANATCL_API anatcl_status anatcl_cohort_generate(const char* config_json,
                                                anatcl_cohort** out);

/* Cohort file round-trip (JSON Lines, checksummed; bit-exact). */
ANATCL_API anatcl_status anatcl_cohort_write(const anatcl_cohort* cohort,
                                             const char* path);
ANATCL_API anatcl_status anatcl_cohort_read(const char* path,
                                            anatcl_cohort** out);

/* Effective config of a cohort as a JSON string. */
ANATCL_API anatcl_status anatcl_cohort_config(const anatcl_cohort* cohort,
                                              char** json_out);

/* Anatomy count / embedding dimension / patient count of a cohort. Any
 * out-pointer may be NULL. */
ANATCL_API anatcl_status anatcl_cohort_dims(const anatcl_cohort* cohort,
                                            size_t* m_out, size_t* d_out,
                                            size_t* n_patients_out);

ANATCL_API void anatcl_cohort_free(anatcl_cohort* cohort);

/* ---- Models ---------------------------------------------------------- */

typedef struct anatcl_model anatcl_model;

/* Fresh near-identity initialization for M anatomies in D dimensions. */
ANATCL_API anatcl_status anatcl_model_init(size_t m, size_t d, uint64_t seed,
                                           anatcl_model** out);

/* Checkpoint round-trip (JSON; bit-exact). */
ANATCL_API anatcl_status anatcl_model_write(const anatcl_model* model,
                                            const char* path);
ANATCL_API anatcl_status anatcl_model_read(const char* path,
                                           anatcl_model** out);

ANATCL_API anatcl_status anatcl_model_dims(const anatcl_model* model,
                                           size_t* m_out, size_t* d_out);

ANATCL_API void anatcl_model_free(anatcl_model* model);

/* ---- Training -------------------------------------------------------- */

/* Trains a fresh model on the cohort. train_config_json may be NULL/"{}";
 * fields: epochs, batch_size, learning_rate, lambda, enable_global_loss,
 * enable_augment, pooling ("mean"|"positional"), seed, beta1, beta2,
 * eps_adam, clip_norm, max_steps, augment {keep_min_fraction,
 * shuffle_enabled, subset_enabled}.
 * On success *model_out is the trained model and, when trace_jsonl_out is
 * non-NULL, *trace_jsonl_out holds the JSON-Lines step/epoch trace.
 * A non-finite loss aborts with ANATCL_NUMERIC_ERROR; the error message
 * carries the failing step and parameter norms. */
ANATCL_API anatcl_status anatcl_train(const anatcl_cohort* cohort,
                                      const char* train_config_json,
                                      anatcl_model** model_out,
                                      char** trace_jsonl_out);

/* Validates a partial train config and returns the effective config with
 * every field filled in, for echoing into run records. */
ANATCL_API anatcl_status anatcl_train_config_echo(const char* train_config_json,
                                                  char** full_json_out);

/* ---- Zero-shot evaluation -------------------------------------------- */

/* Scores every (patient, anatomy) against the cohort's prompt templates
 * and aggregates per class and per template. pooling is "mean" or
 * "positional" (NULL means positional). Either output may be NULL. */
ANATCL_API anatcl_status anatcl_evaluate(const anatcl_model* model,
                                         const anatcl_cohort* cohort,
                                         const char* pooling,
                                         char** metrics_json_out,
                                         char** metrics_csv_out);

/* ---- Embedding diagnostics ------------------------------------------- */

/* Encodes the whole cohort through both branches and reports collapse
 * statistics. bins <= 0 selects the default (40).
 *   summary_json_out:    {text: {...}, visual: {...}} collapse indices
 *   text_hist_csv_out:   bin_left,bin_right,count rows over text pairs
 *   visual_hist_csv_out: same over visual pairs
 *   projection_csv_out:  x,y,modality,anatomy rows (2-component PCA)
 * Any output may be NULL to skip it. */
ANATCL_API anatcl_status anatcl_diagnose(const anatcl_model* model,
                                         const anatcl_cohort* cohort,
                                         const char* pooling, int bins,
                                         char** summary_json_out,
                                         char** text_hist_csv_out,
                                         char** visual_hist_csv_out,
                                         char** projection_csv_out);

/* ---- Gradient checking ----------------------------------------------- */

/* Compares reverse-mode gradients of the full loss against central finite
 * differences at random small configurations. config_json may be NULL or
 * "{}"; fields: seed, n_configs, max_b, max_m, max_d, step, tolerance,
 * lambda. *pass_out is 1 when every case is within tolerance, else 0 (the
 * call still returns ANATCL_OK; the report carries the worst offender). */
ANATCL_API anatcl_status anatcl_gradcheck(const char* config_json,
                                          char** report_json_out,
                                          int* pass_out);

/* ---- Ablation table --------------------------------------------------- */

/* Trains the four toggle configurations {local}, {local+global},
 * {local+augment}, {local+augment+global} on the cohort with identical
 * seeds and returns the per-row mean/std metrics table as CSV.
 * train_config_json provides the shared base config. */
ANATCL_API anatcl_status anatcl_ablation(const anatcl_cohort* cohort,
                                         const char* train_config_json,
                                         char** table_csv_out);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* ANATCL_H */
