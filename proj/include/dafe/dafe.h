/* Deep adaptive feature embedding toolkit: C interface to the shared
 * library. All entry points return a status code; on failure a thread-local
 * message is available from dafe_last_error(). Handles are opaque and must
 * be released with their matching free function. */

#ifndef DAFE_H
#define DAFE_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum dafe_status {
  DAFE_OK = 0,
  DAFE_E_USAGE = 1,
  DAFE_E_DATA = 2,
  DAFE_E_FORMAT = 3,
  DAFE_E_DIMENSION = 4,
  DAFE_E_PARAMETER = 5,
  DAFE_E_CONTRACT = 6,
  DAFE_E_CONFIG = 7,
  DAFE_E_IO = 8,
  DAFE_E_INTERNAL = 9
} dafe_status;

const char* dafe_status_name(dafe_status status);

/* Message describing the most recent failure on this thread. */
const char* dafe_last_error(void);

const char* dafe_version(void);

/* ---- configuration ----------------------------------------------------- */

typedef struct dafe_config dafe_config;

/* Built-in defaults (toy-scale geometry). */
dafe_status dafe_config_create(dafe_config** out);

/* Defaults overlaid with a `key = value` config file. */
dafe_status dafe_config_load(const char* path, dafe_config** out);

dafe_status dafe_config_set(dafe_config* config, const char* key, const char* value);

/* Copies the value into buffer (NUL-terminated); fails with
 * DAFE_E_PARAMETER when the buffer is too small. */
dafe_status dafe_config_get(const dafe_config* config, const char* key,
                            char* buffer, size_t buffer_size);

void dafe_config_free(dafe_config* config);

/* ---- pipeline stages ---------------------------------------------------- */

/* Synthetic identity/view dataset as a PGM tree under out_dir. */
dafe_status dafe_run_synth(const dafe_config* config, const char* out_dir);

/* Layer-wise CD pretraining over the dataset; writes a checkpoint and,
 * when recon_csv_out is non-NULL, an epoch,layer,mse curve. */
dafe_status dafe_run_pretrain(const dafe_config* config, const char* data_root,
                              const char* checkpoint_out, const char* recon_csv_out);

/* Mined-quadruplet fine-tuning. pretrain_checkpoint may be NULL, in which
 * case pretraining runs first; resume_checkpoint continues a saved run. */
dafe_status dafe_run_train(const dafe_config* config, const char* data_root,
                           const char* pretrain_checkpoint,
                           const char* resume_checkpoint,
                           const char* checkpoint_out, const char* train_csv_out);

/* Single-shot CMC / mAP over `trials` random gallery draws. Either CSV path
 * and either output pointer may be NULL. */
dafe_status dafe_run_eval(const dafe_config* config, const char* checkpoint_path,
                          const char* data_root, int trials, int multi_query,
                          const char* cmc_csv_out, const char* report_csv_out,
                          double* rank1_out, double* map_out);

/* Finite-sum optimizer benchmark (ridge least squares, N=1000, d=20).
 * variant is one of sgd, sgd-const, saga, qsaga, svrg, nsaga; the trace CSV
 * columns are evaluations,suboptimality,wall_seconds. */
dafe_status dafe_run_bench_optim(const char* variant, int q, int k, double mu,
                                 int epochs, uint64_t seed, const char* trace_csv_out);

/* ---- trained models ------------------------------------------------------ */

typedef struct dafe_model dafe_model;

dafe_status dafe_model_load(const char* checkpoint_path, dafe_model** out);
void dafe_model_free(dafe_model* model);

dafe_status dafe_model_feature_dim(const dafe_model* model, size_t* out);

/* Embeds one image (PGM or rank-2 DAFT) and writes the unit-norm feature
 * vector as a DAFT tensor. */
dafe_status dafe_model_extract(const dafe_model* model, const char* image_path,
                               const char* daft_out);

/* Similarity score of two unit-norm feature vectors under the checkpointed
 * head. */
dafe_status dafe_model_score(const dafe_model* model, const double* feature_a,
                             size_t len_a, const double* feature_b, size_t len_b,
                             double* score_out);

/* ---- DAFT tensor files ---------------------------------------------------- */

/* Reads a DAFT file; *data_out and *dims_out are malloc'd and must be
 * released with dafe_free. */
dafe_status dafe_tensor_read(const char* path, double** data_out,
                             uint32_t** dims_out, uint32_t* rank_out);

dafe_status dafe_tensor_write(const char* path, const double* data,
                              const uint32_t* dims, uint32_t rank);

void dafe_free(void* ptr);

#ifdef __cplusplus
}
#endif

#endif /* DAFE_H */
