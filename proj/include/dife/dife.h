// Copyright 2026 The DIFE Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

/* C interface to the DIFE library. All handles are opaque; every function
 * that can fail returns a dife_status and leaves a message retrievable with
 * dife_last_error() on the calling thread. */

#ifndef DIFE_DIFE_H_
#define DIFE_DIFE_H_

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define DIFE_API __declspec(dllexport)
#else
#define DIFE_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Values match the CLI exit codes. */
typedef enum dife_status {
  DIFE_OK = 0,
  DIFE_CHECK_FAILED = 1,  /* a gradient check did not pass */
  DIFE_CONFIG_ERROR = 2,  /* config, data, file format or I/O */
  DIFE_NUMERIC_ERROR = 3, /* non-finite loss or gradient */
  DIFE_INTERNAL_ERROR = 4,
} dife_status;

typedef struct dife_config dife_config;
typedef struct dife_model dife_model;
typedef struct dife_report dife_report;

typedef void (*dife_log_fn)(const char* line, void* user);

DIFE_API const char* dife_version(void);
DIFE_API const char* dife_last_error(void);
DIFE_API const char* dife_status_name(dife_status status);

/* --- configuration ------------------------------------------------------ */

DIFE_API dife_status dife_config_new(dife_config** out);
DIFE_API dife_status dife_config_load(const char* path, dife_config** out);
DIFE_API void dife_config_free(dife_config* cfg);
/* `key` may be a unique suffix of a schema key ("seed", "lambda1"). */
DIFE_API dife_status dife_config_set(dife_config* cfg, const char* key, const char* value);
/* Parses "key=value". */
DIFE_API dife_status dife_config_assign(dife_config* cfg, const char* assignment);
/* Copies the value into buf (NUL-terminated, truncated to len). *needed,
 * when non-null, receives the full length without the terminator. */
DIFE_API dife_status dife_config_get(const dife_config* cfg, const char* key, char* buf,
                                     size_t len, size_t* needed);
DIFE_API dife_status dife_config_validate(const dife_config* cfg);
/* Every schema key as "key = value" lines. Release with dife_string_free. */
DIFE_API dife_status dife_config_resolved(const dife_config* cfg, char** out);
DIFE_API void dife_string_free(char* s);

/* --- commands ----------------------------------------------------------- */

typedef struct dife_dataset_summary {
  int count;
  int train;
  int val;
  int test;
  size_t manifest_rows;
} dife_dataset_summary;

DIFE_API dife_status dife_generate(const char* out_dir, int count, uint64_t seed,
                                   int height, int width, int force,
                                   dife_dataset_summary* summary);

typedef struct dife_train_summary {
  double best_val_miou;
  int best_epoch;
  int epochs_run;
  int early_stopped;
  int warnings;
} dife_train_summary;

DIFE_API dife_status dife_train(const dife_config* cfg, dife_log_fn log, void* user,
                                dife_train_summary* summary);

typedef struct dife_metrics {
  double miou;
  double mdsc;
  double mprec;
  double mrec;
  double pix_acc;
  int samples;
} dife_metrics;

/* Builds the network described by cfg and loads the checkpoint into it. */
DIFE_API dife_status dife_model_load(const dife_config* cfg, const char* checkpoint,
                                     dife_model** out);
DIFE_API void dife_model_free(dife_model* model);
/* domain: "source" | "target"; split: "train" | "val" | "test". */
DIFE_API dife_status dife_model_evaluate(dife_model* model, const char* data_root,
                                         const char* domain, const char* split,
                                         const char* out_dir, dife_metrics* metrics);

/* axis: "k" | "lambda" | "placement" | "dcloss". workers <= 0 means 1. */
DIFE_API dife_status dife_ablate(const dife_config* cfg, const char* axis, int workers,
                                 dife_log_fn log, void* user, int* rows);

/* module: "ops" | "snr" | "isw" | "net" | "all". Returns DIFE_CHECK_FAILED
 * with a valid report when any check misses its tolerance. */
DIFE_API dife_status dife_gradcheck(const char* module, int seeds, dife_report** out);
DIFE_API size_t dife_report_size(const dife_report* report);
DIFE_API const char* dife_report_name(const dife_report* report, size_t i);
DIFE_API double dife_report_error(const dife_report* report, size_t i);
DIFE_API double dife_report_tolerance(const dife_report* report, size_t i);
DIFE_API int dife_report_passed(const dife_report* report, size_t i);
DIFE_API void dife_report_free(dife_report* report);

/* Test hook: negates the backward rule of the named op. NULL or "" clears. */
DIFE_API void dife_debug_inject_fault(const char* op);

#ifdef __cplusplus
}  /* extern "C" */
#endif

#endif  /* DIFE_DIFE_H_ */
