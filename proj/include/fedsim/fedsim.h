/* C API for the federated-optimization simulator.
 *
 * All functions return FEDSIM_OK on success; on failure they return an error
 * code and leave a message retrievable with fedsim_last_error() (thread
 * local). Strings returned through char** are heap-allocated copies; release
 * them with fedsim_string_free(). Handles are opaque and must be released
 * with their matching *_free function.
 */
#ifndef FEDSIM_FEDSIM_H
#define FEDSIM_FEDSIM_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef struct fedsim_dataset fedsim_dataset;
typedef struct fedsim_result fedsim_result;

typedef enum fedsim_status {
  FEDSIM_OK = 0,
  FEDSIM_ERR_INVALID_ARGUMENT = 1,
  FEDSIM_ERR_IO = 2,
  FEDSIM_ERR_FORMAT = 3,
  FEDSIM_ERR_NUMERIC = 4,
  FEDSIM_ERR_INTERNAL = 5,
} fedsim_status;

const char* fedsim_version(void);

/* Message for the most recent failure on this thread; empty if none. */
const char* fedsim_last_error(void);

void fedsim_string_free(char* s);

/* Builds a dataset from a config "dataset" block (JSON object, same schema
 * as the experiment config). Generation, partitioning, and the train/test
 * split all happen here. */
fedsim_status fedsim_dataset_build(const char* dataset_json,
                                   fedsim_dataset** out);

fedsim_status fedsim_dataset_load(const char* path, fedsim_dataset** out);
fedsim_status fedsim_dataset_save(const fedsim_dataset* dataset,
                                  const char* path);

/* Shard counts, sample totals, and provenance as a JSON document. */
fedsim_status fedsim_dataset_info(const fedsim_dataset* dataset,
                                  char** json_out);

void fedsim_dataset_free(fedsim_dataset* dataset);

/* Runs every configured run of an experiment config (full JSON document).
 * When `dataset` is NULL it is built from the config's dataset block.
 * seed_override >=0 replaces the config's run list with that single seed;
 * pass -1 to keep the config. telemetry_every / threads <= 0 keep config
 * values. */
fedsim_status fedsim_run(const char* config_json, const fedsim_dataset* dataset,
                         int64_t seed_override, int64_t telemetry_every,
                         int64_t threads, fedsim_result** out);

fedsim_status fedsim_result_csv(const fedsim_result* result, char** out);
fedsim_status fedsim_result_rounds_jsonl(const fedsim_result* result,
                                         char** out);
fedsim_status fedsim_result_summary_json(const fedsim_result* result,
                                         char** out);

fedsim_status fedsim_result_run_count(const fedsim_result* result,
                                      size_t* out);
fedsim_status fedsim_result_run_seed(const fedsim_result* result,
                                     size_t run_index, uint64_t* out);

/* Final global parameters of one run. The pointer stays valid until the
 * result handle is freed. */
fedsim_status fedsim_result_final_params(const fedsim_result* result,
                                         size_t run_index,
                                         const double** data, size_t* len);

void fedsim_result_free(fedsim_result* result);

/* Dissimilarity diagnostics for a parameter checkpoint over a dataset.
 * model_json: {"kind":"logistic"|"mlp","hidden_dim":N}. */
fedsim_status fedsim_metrics_dissimilarity(const fedsim_dataset* dataset,
                                           const char* model_json,
                                           const double* params, size_t len,
                                           double epsilon, char** json_out);

/* Checkpoint I/O (u64 count + little-endian f64 values). */
fedsim_status fedsim_params_save(const double* params, size_t len,
                                 const char* path);
fedsim_status fedsim_params_load(const char* path, double** params,
                                 size_t* len);
void fedsim_params_free(double* params);

/* Sufficient-decrease calculator; input/output JSON documents. */
fedsim_status fedsim_theory_eval(const char* params_json, char** json_out);

#ifdef __cplusplus
}
#endif

#endif /* FEDSIM_FEDSIM_H */
