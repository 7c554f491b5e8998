#ifndef HIERGEN_H
#define HIERGEN_H

/* C interface to the hierarchical text-to-image toolkit. Every function
 * returns a status code; on failure hg_last_error() describes the problem.
 * Strings and buffers returned through out-parameters are owned by the caller
 * and released with hg_free_string / hg_free_bytes. */

#include <stddef.h>
#include <stdint.h>

#if defined(HIERGEN_BUILDING_LIBRARY)
#define HG_API __attribute__((visibility("default")))
#else
#define HG_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum hg_status {
  HG_OK = 0,
  HG_INVALID_ARGUMENT = 1,
  HG_INVALID_LABEL = 2,
  HG_SHAPE_MISMATCH = 3,
  HG_OUT_OF_RANGE = 4,
  HG_IO = 5,
  HG_PARSE = 6,
  HG_CONFIG_MISMATCH = 7,
  HG_NON_FINITE = 8,
  HG_NOT_LOADED = 9,
  HG_DIVERGED = 10,
  HG_INTERNAL = 100
} hg_status;

typedef struct hg_pipeline hg_pipeline;

HG_API const char* hg_version(void);
/* Message and field path of the last failure on the calling thread. */
HG_API const char* hg_last_error(void);
HG_API const char* hg_last_error_field(void);
HG_API void hg_free_string(char* s);
HG_API void hg_free_bytes(uint8_t* bytes);
/* 0 debug, 1 info, 2 warn, 3 error, 4 off. */
HG_API void hg_set_log_level(int level);

/* Configuration: `config_path` may be NULL for the defaults. The effective
 * configuration is returned as JSON. */
HG_API hg_status hg_config_resolve(const char* config_path, char** config_json);

/* Writes `count` shape-world examples plus dataset.json; data.seed is
 * replaced by `seed`. */
HG_API hg_status hg_make_shapeworld(const char* config_path, const char* out_dir, uint64_t count, uint64_t seed,
                                    char** digest);

/* Trains one stage ("box", "extractor", "shape", "image") into run_dir.
 * A non-NULL `seed` overrides the configured training seed. The history is
 * returned as a JSON array of per-epoch records. */
HG_API hg_status hg_train(const char* config_path, const char* stage, const char* run_dir, int resume,
                          int allow_mismatch, const uint64_t* seed, char** history_json);

/* Evaluates a trained stage on the validation split; returns a MetricReport. */
HG_API hg_status hg_eval(const char* config_path, const char* stage, const char* run_dir, uint64_t seed,
                         char** report_json);

/* Loads box/shape/image checkpoints from run_dir; `config_path` may be NULL
 * to use the configuration stored in the box checkpoint. */
HG_API hg_status hg_pipeline_load(const char* run_dir, const char* config_path, hg_pipeline** out);
HG_API void hg_pipeline_free(hg_pipeline* pipeline);
HG_API hg_status hg_pipeline_meta(const hg_pipeline* pipeline, char** meta_json);
HG_API hg_status hg_sample_layout(const hg_pipeline* pipeline, const char* text, uint64_t seed, char** layout_json);
/* Runs the pipeline; `layout_json` (may be NULL) skips box sampling. Outputs
 * the layout JSON, an array of RLE masks and the PNG bytes. */
HG_API hg_status hg_generate(const hg_pipeline* pipeline, const char* text, uint64_t seed, const char* layout_json,
                             char** layout_out, char** masks_out, uint8_t** png, size_t* png_size);

/* Serves the HTTP API until the process is stopped. `address` is
 * "host:port"; NULL uses HIERGEN_ADDR or 127.0.0.1:8080. */
HG_API hg_status hg_serve(const char* run_dir, const char* config_path, const char* address);

#ifdef __cplusplus
}
#endif

#endif
