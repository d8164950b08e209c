/* C interface to the negrefine engine.
 *
 * Handles are opaque; every function returning nr_status leaves a message for
 * nr_last_error() on failure. Strings returned by the library stay valid until
 * the owning handle is destroyed (or, for nr_last_error, until the next call
 * on the same thread).
 */
#ifndef NEGREFINE_H
#define NEGREFINE_H

#include <stddef.h>
#include <stdint.h>

#if defined(NEGREFINE_BUILDING_LIBRARY)
#define NR_API __attribute__((visibility("default")))
#else
#define NR_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum nr_status {
  NR_OK = 0,
  NR_INVALID_ARGUMENT,
  NR_IO_FAILURE,
  NR_MALFORMED_HEADER,
  NR_DIMENSION_MISMATCH,
  NR_DUPLICATE_ID,
  NR_NON_FINITE_VALUE,
  NR_DEGENERATE_ROW,
  NR_CHECKSUM_MISMATCH,
  NR_EMPTY_INPUT,
  NR_EMPTY_POOL,
  NR_TRANSPORT,
  NR_PROTOCOL_VIOLATION,
  NR_UNPARSEABLE,
  NR_CONFIG_DIGEST_MISMATCH,
  NR_PARTIAL_RESULTS,
  NR_STAGE_FAILURE,
  NR_INTERNAL
} nr_status;

typedef struct nr_config nr_config;
typedef struct nr_archive nr_archive;
typedef struct nr_report nr_report;
typedef struct nr_ablation nr_ablation;

NR_API const char* nr_version(void);
NR_API const char* nr_last_error(void);
NR_API const char* nr_status_string(nr_status status);
/* 0 success, 3 provider failures, 2 everything else. */
NR_API int nr_status_exit_code(nr_status status);

/* Configuration. Defaults, then NEGREFINE_* environment, then file, then set. */
NR_API nr_status nr_config_create(nr_config** out);
NR_API nr_status nr_config_load(const char* path, nr_config** out);
NR_API nr_status nr_config_set(nr_config* cfg, const char* section, const char* key,
                               const char* value);
/* Copies the value into buf (NUL-terminated); *needed gets the full length. */
NR_API nr_status nr_config_get(const nr_config* cfg, const char* section, const char* key,
                               char* buf, size_t buf_len, size_t* needed);
NR_API const char* nr_config_digest(nr_config* cfg);
NR_API const char* nr_config_text(nr_config* cfg);
NR_API nr_status nr_config_validate(const nr_config* cfg);
NR_API void nr_config_destroy(nr_config* cfg);

/* Embedding archives. kind: 0 text, 1 image. Rows are normalized on create. */
NR_API nr_status nr_archive_create(size_t rows, size_t dim, const float* data,
                                   const char* const* ids, int kind, const char* model_tag,
                                   nr_archive** out);
NR_API nr_status nr_archive_load(const char* dir, nr_archive** out);
NR_API nr_status nr_archive_save(const nr_archive* a, const char* dir);
NR_API size_t nr_archive_rows(const nr_archive* a);
NR_API size_t nr_archive_dim(const nr_archive* a);
NR_API const char* nr_archive_id(const nr_archive* a, size_t row);
NR_API const float* nr_archive_row(const nr_archive* a, size_t row);
NR_API void nr_archive_destroy(nr_archive* a);
/* out is rows(a) x rows(b), row-major. */
NR_API nr_status nr_similarity(const nr_archive* a, const nr_archive* b, double* out);

/* Scoring and metric primitives. */
NR_API nr_status nr_s_neglabel(const double* sim_in, size_t n_in, const double* sim_neg,
                               size_t n_neg, double tau, double* out);
NR_API double nr_mm_kernel(double s_t, double s_n, double tau);
NR_API double nr_final_score(double s_neglabel, double s_mm, double alpha);
NR_API nr_status nr_auroc(const double* id, size_t n, const double* ood, size_t m, double* out);
NR_API nr_status nr_fpr_at_tpr(const double* id, size_t n, const double* ood, size_t m,
                               double tpr_target, double* gamma, double* fpr);
/* 1 when the score is accepted as in-distribution. */
NR_API int nr_detect(double score, double gamma);

/* Pipeline stages. Paths are files or archive directories. */
NR_API nr_status nr_stage_mine(const nr_config* cfg, const char* lexicon, const char* id_labels,
                               const char* out_dir);
NR_API nr_status nr_stage_filter(const nr_config* cfg, const char* neg_dir, const char* id_dir,
                                 const char* journal, const char* out_dir);
NR_API nr_status nr_stage_score(const nr_config* cfg, const char* images, const char* id_dir,
                                const char* neg_dir, const char* out_file);
/* ood: n_ood pairs of name and score file. */
NR_API nr_status nr_stage_eval(const char* id_scores, const char* const* ood_names,
                               const char* const* ood_files, size_t n_ood, double tpr_target,
                               int allow_partial, const char* out_file, nr_report** out);

NR_API nr_status nr_run_pipeline(const nr_config* cfg, int force, nr_report** out);
NR_API const char* nr_report_text(const nr_report* r);
NR_API const char* nr_report_path(const nr_report* r);
NR_API double nr_report_avg_auroc(const nr_report* r);
NR_API double nr_report_avg_fpr(const nr_report* r);
NR_API double nr_report_gamma(const nr_report* r);
NR_API size_t nr_report_datasets(const nr_report* r);
NR_API const char* nr_report_dataset_name(const nr_report* r, size_t i);
NR_API double nr_report_dataset_auroc(const nr_report* r, size_t i);
NR_API double nr_report_dataset_fpr(const nr_report* r, size_t i);
/* Pipeline stages that were reused rather than recomputed; 0 for eval-only reports. */
NR_API size_t nr_report_skipped_stages(const nr_report* r);
NR_API void nr_report_destroy(nr_report* r);

/* values: n_values strings; n_values == 0 means all four components cells. */
NR_API nr_status nr_ablate(const nr_config* cfg, const char* dimension,
                           const char* const* values, size_t n_values, int force,
                           nr_ablation** out);
NR_API const char* nr_ablation_text(const nr_ablation* t);
NR_API size_t nr_ablation_rows(const nr_ablation* t);
NR_API const char* nr_ablation_value(const nr_ablation* t, size_t i);
NR_API double nr_ablation_avg_auroc(const nr_ablation* t, size_t i);
NR_API double nr_ablation_avg_fpr(const nr_ablation* t, size_t i);
NR_API void nr_ablation_destroy(nr_ablation* t);

NR_API nr_status nr_fixture_write(const char* dir, uint64_t seed);

#ifdef __cplusplus
}
#endif

#endif
