/* Copyright (c) 2026, dialogtune contributors
 * SPDX-License-Identifier: Apache-2.0
 *
 * C interface to the dialogtune toolkit. Every function returns a
 * dt_status; on failure dt_last_error() describes the problem for the
 * calling thread. Strings returned through char** are owned by the caller
 * and released with dt_string_free().
 */
#ifndef DIALOGTUNE_DIALOGTUNE_H
#define DIALOGTUNE_DIALOGTUNE_H

#include <stddef.h>
#include <stdint.h>

#if defined(DIALOGTUNE_BUILDING)
#define DT_API __attribute__((visibility("default")))
#else
#define DT_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum dt_status {
    DT_OK = 0,
    DT_INVALID_ARGUMENT = 1,
    DT_CONFIG = 2,
    DT_IO = 3,
    DT_CORPUS = 4,
    DT_BACKEND = 5,
    DT_JUDGE = 6,
    DT_NOT_FOUND = 7,
    DT_UNAVAILABLE = 8,
    DT_LOCKED = 9,
    DT_NUMERIC = 10,
    DT_TIMEOUT = 11,
    DT_CONFLICT = 12,
    DT_INTERNAL = 13,
    /* The stage made progress but did not finish; rerun with resume. */
    DT_PARTIAL = 100
} dt_status;

DT_API const char* dt_version(void);
DT_API const char* dt_status_name(dt_status status);
/* Message of the last failure on this thread; "" if none. */
DT_API const char* dt_last_error(void);
/* JSON array of field-level details for the last failure; "[]" if none. */
DT_API const char* dt_last_error_details(void);
DT_API void dt_string_free(char* s);

/* ---- pipeline ---------------------------------------------------------- */

typedef struct dt_pipeline dt_pipeline;
typedef void (*dt_log_fn)(const char* message, void* user);

typedef struct dt_pipeline_options {
    const char* config_path; /* JSON pipeline config; required */
    int dry_run;
    int resume;
    int force;
    int has_seed; /* when nonzero, `seed` replaces every configured seed */
    uint64_t seed;
    const char* evaluator_id; /* ballots stage; NULL means "evaluator" */
    dt_log_fn log;
    void* log_user;
} dt_pipeline_options;

DT_API void dt_pipeline_options_init(dt_pipeline_options* options);
/* Loads and validates the config. Invalid configs fail with DT_CONFIG and
 * one detail per field. */
DT_API dt_status dt_pipeline_open(const dt_pipeline_options* options, dt_pipeline** out);
DT_API void dt_pipeline_close(dt_pipeline* pipeline);
/* Runs one stage; *result_json receives {stage, status, summary, output_dir}. */
DT_API dt_status dt_pipeline_run(dt_pipeline* pipeline, const char* stage, char** result_json);
DT_API dt_status dt_pipeline_config_json(const dt_pipeline* pipeline, char** config_json);
/* NULL-terminated list of stage names in chain order. */
DT_API const char* const* dt_stage_names(void);

/* ---- serving ----------------------------------------------------------- */

typedef struct dt_server dt_server;

/* Chat service over base/sft/dpo using the pipeline's checkpoints and serve
 * settings. Models load lazily on the first request. */
DT_API dt_status dt_server_open(const dt_pipeline* pipeline, dt_server** out);
/* Binds and serves on a background thread; *port receives the bound port. */
DT_API dt_status dt_server_start(dt_server* server, int* port);
DT_API void dt_server_stop(dt_server* server);
DT_API void dt_server_close(dt_server* server);

/* ---- numerics ---------------------------------------------------------- */

typedef struct dt_generation_params {
    double temperature;
    int top_k; /* 0 disables */
    double top_p;
    int max_new_tokens;
} dt_generation_params;

DT_API dt_generation_params dt_default_generation_params(void);
/* Temperature, top-k, then top-p; writes n probabilities to `out`. */
DT_API dt_status dt_filter_logits(const double* logits, size_t n, const dt_generation_params* params, double* out);
/* NF4 quantize-then-dequantize with the standard codebook (block 64). */
DT_API dt_status dt_nf4_roundtrip(const double* values, size_t n, double* out);
DT_API dt_status dt_dpo_loss(double policy_chosen, double policy_rejected, double reference_chosen,
                             double reference_rejected, double beta, double* loss);
/* Log-probabilities of scores 1..5 (use -INFINITY for absent tokens). */
DT_API dt_status dt_geval_score(const double logprobs[5], double* weighted, double* normalized);
/* Tallies a ballots JSON-lines file; *result_json gets proportions and counts. */
DT_API dt_status dt_tally_ballots_file(const char* path, char** result_json);

#ifdef __cplusplus
}
#endif

#endif /* DIALOGTUNE_DIALOGTUNE_H */
