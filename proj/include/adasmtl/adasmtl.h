#ifndef ADASMTL_ADASMTL_H
#define ADASMTL_ADASMTL_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define AMTL_API __declspec(dllexport)
#else
#define AMTL_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Every fallible call returns a status; on failure amtl_last_error() holds a
 * message for the calling thread until its next failing call. */
typedef enum amtl_status {
    AMTL_OK = 0,
    AMTL_ERR_CONTRACT = 1,
    AMTL_ERR_CONFIG = 2,
    AMTL_ERR_IO = 3,
    AMTL_ERR_SCHEMA = 4,
    AMTL_ERR_PARSE = 5,
    AMTL_ERR_VALIDATION = 6,
    AMTL_ERR_ELIGIBILITY = 7,
    AMTL_ERR_REGISTRATION = 8,
    AMTL_ERR_NUMERIC = 9,
    AMTL_ERR_UNDEFINED = 10,
    AMTL_ERR_BUSY = 11,
    AMTL_ERR_UNSUPPORTED = 12,
    AMTL_ERR_INTERNAL = 13
} amtl_status;

#define AMTL_NUM_ITEMS 13
#define AMTL_NUM_FEATURES 26
#define AMTL_NUM_TARGETS 14

AMTL_API const char* amtl_version(void);
AMTL_API const char* amtl_status_string(amtl_status status);
AMTL_API const char* amtl_last_error(void);
/* Frees strings returned through char** out-parameters. */
AMTL_API void amtl_string_free(char* s);
/* 0 debug, 1 info, 2 warn, 3 error, 4 off. */
AMTL_API void amtl_set_log_level(int level);

/* ---- experiments ------------------------------------------------------ */

typedef struct amtl_experiment amtl_experiment;

/* Optional command-line style overrides; NULL strings and zero has_* flags
 * leave the config untouched. */
typedef struct amtl_overrides {
    int has_seed;
    uint64_t seed;
    const char* modality; /* clinical | mri | both */
    const char* backbone; /* vit | swin | none */
    int has_alpha;
    double alpha;
    const char* output_dir;
} amtl_overrides;

/* config_json may be NULL for all defaults. */
AMTL_API amtl_status amtl_experiment_create(const char* config_json, const amtl_overrides* overrides,
                                            amtl_experiment** out);
AMTL_API amtl_status amtl_experiment_load(const char* path, const amtl_overrides* overrides, amtl_experiment** out);
AMTL_API void amtl_experiment_free(amtl_experiment* exp);
/* Fully resolved config (defaults expanded, seeds derived). */
AMTL_API amtl_status amtl_experiment_config_json(const amtl_experiment* exp, char** out_json);
/* Runs stages up to and including `until` (synth, preprocess, train,
 * evaluate, explain, report; NULL means report). out_json receives the stage
 * outcomes and the manifest; it is also filled on stage failure. */
AMTL_API amtl_status amtl_experiment_run(amtl_experiment* exp, const char* until, char** out_json);
/* variants_json: NULL for the configured variants, or a JSON array such as
 * ["clinical", {"modality": "both", "backbone": "swin"}]. */
AMTL_API amtl_status amtl_experiment_ablate(amtl_experiment* exp, const char* variants_json, char** out_json);

/* ---- clinical cohorts ------------------------------------------------- */

typedef struct amtl_cohort amtl_cohort;

/* Lenient load; row-level problems are returned in issues_json (may be NULL)
 * as [{subject_id, field, message}] while the call still succeeds. */
AMTL_API amtl_status amtl_cohort_load_csv(const char* path, amtl_cohort** out, char** issues_json);
/* spec_json NULL means the default synthetic cohort. */
AMTL_API amtl_status amtl_cohort_generate(const char* spec_json, amtl_cohort** out);
AMTL_API amtl_status amtl_cohort_write_csv(const amtl_cohort* cohort, const char* path);
AMTL_API void amtl_cohort_free(amtl_cohort* cohort);
AMTL_API size_t amtl_cohort_size(const amtl_cohort* cohort);
/* Borrowed pointer valid while the cohort lives. */
AMTL_API const char* amtl_cohort_subject_id(const amtl_cohort* cohort, size_t index);
AMTL_API amtl_status amtl_cohort_features(const amtl_cohort* cohort, size_t index, double out[AMTL_NUM_FEATURES]);
AMTL_API amtl_status amtl_cohort_targets(const amtl_cohort* cohort, size_t index, double out[AMTL_NUM_TARGETS]);
/* {train_ids, val_ids, stratified, split_hash} */
AMTL_API amtl_status amtl_cohort_split(const amtl_cohort* cohort, double split_ratio, uint64_t seed, char** out_json);

/* ---- volumes ---------------------------------------------------------- */

typedef struct amtl_volume amtl_volume;

/* data is x-fastest, shape[0]*shape[1]*shape[2] values; spacing may be NULL (1 mm). */
AMTL_API amtl_status amtl_volume_create(const size_t shape[3], const double spacing[3], const double* data,
                                        amtl_volume** out);
AMTL_API amtl_status amtl_volume_load(const char* path, amtl_volume** out);
AMTL_API amtl_status amtl_volume_save(const amtl_volume* vol, const char* path);
AMTL_API void amtl_volume_free(amtl_volume* vol);
AMTL_API void amtl_volume_shape(const amtl_volume* vol, size_t shape[3]);
/* Borrowed pointer to the voxel data, x-fastest. */
AMTL_API const double* amtl_volume_data(const amtl_volume* vol);
/* degenerate may be NULL; set to 1 for constant input. */
AMTL_API amtl_status amtl_volume_normalize(const amtl_volume* in, amtl_volume** out, int* degenerate);
AMTL_API amtl_status amtl_volume_correct_bias(const amtl_volume* in, double smoothing_scale_mm, amtl_volume** out);
AMTL_API amtl_status amtl_volume_foreground_cv(const amtl_volume* vol, double* out);
/* config_json may be NULL; transform_json receives {transform, converged, ncc}. */
AMTL_API amtl_status amtl_volume_register(const amtl_volume* moving, const amtl_volume* fixed, const char* config_json,
                                          amtl_volume** out, char** transform_json);

/* ---- models ----------------------------------------------------------- */

typedef struct amtl_model amtl_model;

AMTL_API amtl_status amtl_model_create(const char* model_config_json, amtl_model** out);
AMTL_API amtl_status amtl_model_load(const char* path, amtl_model** out);
AMTL_API amtl_status amtl_model_save(const amtl_model* model, const char* path);
AMTL_API void amtl_model_free(amtl_model* model);
AMTL_API size_t amtl_model_parameter_count(const amtl_model* model);
AMTL_API amtl_status amtl_model_config_json(const amtl_model* model, char** out_json);
/* clinical: batch x 26 row-major (NULL if unused); volumes: batch handles
 * (NULL if unused); out: batch x 14 row-major. */
AMTL_API amtl_status amtl_model_forward(const amtl_model* model, size_t batch, const double* clinical,
                                        const amtl_volume* const* volumes, double* out);

/* ---- loss and metrics ------------------------------------------------- */

/* pred/target: n x 14 row-major. grad (nullable) receives n x 14. */
AMTL_API amtl_status amtl_total_loss(const double* pred, const double* target, size_t n, double alpha, double* loss,
                                     double* grad);
AMTL_API amtl_status amtl_mae(const double* pred, const double* truth, size_t n, double* out);
AMTL_API amtl_status amtl_rmse(const double* pred, const double* truth, size_t n, double* out);
/* AMTL_ERR_UNDEFINED for zero-variance input. */
AMTL_API amtl_status amtl_pearson(const double* pred, const double* truth, size_t n, double* out);
/* out receives percentages; when *degenerate is set out is left untouched. */
AMTL_API amtl_status amtl_subscore_contribution(const double predicted[AMTL_NUM_ITEMS], double out[AMTL_NUM_ITEMS],
                                                int* degenerate);

#ifdef __cplusplus
}
#endif

#endif
