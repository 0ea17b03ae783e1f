/* Graph-S4 shared-library interface.
 *
 * All entry points are exception-free: failures are reported through the
 * returned status code and a thread-local message readable with
 * gs4_last_error(). Handles are opaque; every *_free function accepts NULL.
 */
#ifndef GS4_H
#define GS4_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum gs4_status {
  GS4_OK = 0,
  GS4_ERR_INVALID = 1, /* bad arguments, config, or file contents */
  GS4_ERR_RUNTIME = 2  /* I/O failures, numeric failures, internal errors */
} gs4_status;

/* Message describing the most recent failure on this thread; empty string
 * when the last call succeeded. The pointer stays valid until the next
 * library call on the same thread. */
const char* gs4_last_error(void);

const char* gs4_version(void);

/* ---- models ---------------------------------------------------------- */

typedef struct gs4_model gs4_model;

gs4_status gs4_model_load(const char* path, gs4_model** out);
gs4_status gs4_model_save(const gs4_model* model, const char* path);
void gs4_model_free(gs4_model* model);

/* Anomaly score of one sample file (GS4T binary, or CSV when the path ends
 * in .csv) under the named task of the run configuration. */
gs4_status gs4_score(const char* config_path, const char* sample_path,
                     const char* task_name, double* out_score);

/* ---- pipeline commands ----------------------------------------------- */
/* Each command reads the JSON run configuration at config_path, optionally
 * overriding the output directory and seed (pass NULL / override_seed = 0
 * with has_seed_override = 0 to use the config values). */

typedef struct gs4_run_options {
  const char* output_dir; /* NULL: use the config value */
  uint64_t seed;          /* used when has_seed_override != 0 */
  int has_seed_override;
} gs4_run_options;

gs4_status gs4_cmd_synth(const char* config_path, const gs4_run_options* opts);
gs4_status gs4_cmd_pretrain(const char* config_path,
                            const gs4_run_options* opts);
gs4_status gs4_cmd_screen(const char* config_path, const gs4_run_options* opts,
                          char** out_report_json);
gs4_status gs4_cmd_finetune(const char* config_path,
                            const gs4_run_options* opts);
gs4_status gs4_cmd_eval(const char* config_path, const gs4_run_options* opts,
                        char** out_result_json);

/* Runs the built-in gradient check; *out_pass is 1 when every tensor is
 * within tolerance. Returns GS4_OK even when the check fails numerically;
 * callers decide the exit code. */
gs4_status gs4_cmd_gradcheck(const char* config_path,
                             const gs4_run_options* opts, int* out_pass,
                             char** out_report_text);

/* Frees strings returned through out parameters above. */
void gs4_string_free(char* s);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* GS4_H */
