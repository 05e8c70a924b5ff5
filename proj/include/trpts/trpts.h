/* Copyright 2026 The TR-PTS Authors
 * SPDX-License-Identifier: Apache-2.0
 *
 * C interface to the trpts library. All objects are opaque handles; every
 * call returns a status code and, on failure, leaves a message retrievable
 * with trpts_last_error() on the calling thread.
 */

#ifndef TRPTS_TRPTS_H_
#define TRPTS_TRPTS_H_

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define TRPTS_API __declspec(dllexport)
#else
#define TRPTS_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum trpts_status {
  TRPTS_OK = 0,
  TRPTS_ERR_USAGE = 1,   /* bad arguments, refusal to overwrite outputs */
  TRPTS_ERR_CONFIG = 2,  /* invalid or unknown configuration */
  TRPTS_ERR_NUMERIC = 3, /* non-finite loss, gradient or score */
  TRPTS_ERR_INPUT = 4,   /* malformed data or shape mismatch */
  TRPTS_ERR_IO = 5,      /* missing or unreadable files */
  TRPTS_ERR_INTERNAL = 6
} trpts_status;

typedef struct trpts_context trpts_context;
typedef struct trpts_model trpts_model;

typedef void (*trpts_log_fn)(const char* message, void* user_data);

TRPTS_API const char* trpts_version(void);
TRPTS_API const char* trpts_status_name(trpts_status status);
/* Message of the last failed call on this thread ("" if none). */
TRPTS_API const char* trpts_last_error(void);

/* config_path may be NULL for built-in defaults. */
TRPTS_API trpts_status trpts_context_create(const char* config_path, trpts_context** out);
TRPTS_API void trpts_context_destroy(trpts_context* ctx);
/* key is "section.name", e.g. "select.top_m". */
TRPTS_API trpts_status trpts_context_set(trpts_context* ctx, const char* key, const char* value);
/* Copies the value (NUL terminated) into buf; *needed receives the full length + 1. */
TRPTS_API trpts_status trpts_context_get(const trpts_context* ctx, const char* key, char* buf, size_t capacity,
                                         size_t* needed);
/* 16 hex digits plus NUL. */
TRPTS_API trpts_status trpts_context_config_hash(const trpts_context* ctx, char out[17]);
TRPTS_API trpts_status trpts_context_set_logger(trpts_context* ctx, trpts_log_fn fn, void* user_data);

/* stage: gen-data, pretrain, score, select, plan, finetune, eval, report, ablate. */
TRPTS_API trpts_status trpts_run_stage(trpts_context* ctx, const char* stage, const char* out_dir, int force);
/* gen-data through report. */
TRPTS_API trpts_status trpts_run_pipeline(trpts_context* ctx, const char* out_dir, int force);

TRPTS_API trpts_status trpts_model_load(const char* checkpoint_path, trpts_model** out);
TRPTS_API void trpts_model_destroy(trpts_model* model);
TRPTS_API trpts_status trpts_model_num_parameters(const trpts_model* model, int64_t* out);
TRPTS_API trpts_status trpts_model_num_classes(const trpts_model* model, int32_t* out);
/* images: batch x H x W x C floats; labels receives batch class indices. */
TRPTS_API trpts_status trpts_model_predict(const trpts_model* model, const float* images, int64_t batch,
                                           int64_t* labels);
/* Top-1 accuracy on a dataset pack; plan_path (plan.json) may be NULL. */
TRPTS_API trpts_status trpts_model_evaluate(const trpts_model* model, const char* dataset_path,
                                            const char* plan_path, double* accuracy);

#ifdef __cplusplus
}
#endif

#endif /* TRPTS_TRPTS_H_ */
