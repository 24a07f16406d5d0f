/* dcedit.h - C interface to the dcedit editing pipeline.
 *
 * The library wraps a deterministic toy multimodal diffusion transformer with
 * a training-free editing loop: cross-attention localization maps are
 * extracted and refined, then drive feature-level value fusion and
 * latent-level mask blending around rectified-flow inversion/sampling.
 *
 * Usage: fill a dcedit_config (dcedit_config_init, optionally
 * dcedit_config_load), create a pipeline bound to a benchmark manifest and an
 * output directory, then run the localize/edit/eval stages per item. All
 * functions return DCEDIT_OK on success; on failure the thread-local message
 * from dcedit_last_error() describes what went wrong.
 */

#ifndef DCEDIT_H
#define DCEDIT_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define DCEDIT_API __declspec(dllexport)
#else
#define DCEDIT_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum dcedit_status {
    DCEDIT_OK = 0,
    DCEDIT_ERR_INVALID_ARGUMENT = 1,
    DCEDIT_ERR_NOT_FOUND = 2,
    DCEDIT_ERR_TRACE_MISMATCH = 3,
    DCEDIT_ERR_NUMERIC = 4,
    DCEDIT_ERR_SINGULAR = 5,
    DCEDIT_ERR_IO = 6,
    DCEDIT_ERR_INTERNAL = 7
} dcedit_status;

typedef struct dcedit_config {
    /* toy model */
    uint32_t layers;
    uint32_t heads;
    uint32_t model_dim; /* divisible by heads */
    uint32_t text_dim;
    uint32_t visual_dim;
    uint64_t seed; /* DCEDIT_SEED, when set, overrides this */

    /* editing loop */
    uint32_t steps;         /* K */
    double cfg_scale;       /* classifier-free guidance strength */
    uint32_t feature_steps; /* value fusion during the first f sampling steps */
    uint32_t latent_steps;  /* mask blending during the first b sampling steps */
    uint32_t r_layers;      /* trailing layers under feature control; 0 = layers/2 rounded up */
    double lambda_percentile; /* mask binarization percentile, in [0,100] */
    double epsilon;           /* ridge regularization of the textual inverse */

    /* latent grid for synthetic sources */
    uint32_t grid_h;
    uint32_t grid_w;
    uint32_t grid_channels;
} dcedit_config;

typedef struct dcedit_pipeline dcedit_pipeline;

DCEDIT_API const char* dcedit_version(void);

DCEDIT_API const char* dcedit_status_name(dcedit_status status);

/* Thread-local message for the most recent failure on this thread; empty
 * string after a success. The pointer stays valid until the next dcedit call
 * on the same thread. */
DCEDIT_API const char* dcedit_last_error(void);

/* Fills in the documented defaults: 4 layers, 2 heads, dims 16/12/20, seed
 * 42, K=8, cfg 3, f=1, b=3, lambda 80, epsilon 1e-6, grid 12x12x4. */
DCEDIT_API void dcedit_config_init(dcedit_config* config);

/* Merges a JSON config file onto *config; keys absent from the file keep
 * their current values. */
DCEDIT_API dcedit_status dcedit_config_load(const char* path, dcedit_config* config);

/* Builds the model and loads the manifest. manifest_path may be NULL for
 * pipelines that only run the selftest. */
DCEDIT_API dcedit_status dcedit_pipeline_create(const dcedit_config* config,
                                                const char* manifest_path,
                                                const char* output_dir,
                                                dcedit_pipeline** out_pipeline);

DCEDIT_API void dcedit_pipeline_destroy(dcedit_pipeline* pipeline);

/* Writes <item>.map.tnsr and <item>.map.png into the output directory.
 * selection_override, when non-NULL, is a comma-separated list of source
 * token indices or words replacing the annotated/derived blend span. */
DCEDIT_API dcedit_status dcedit_run_localize(dcedit_pipeline* pipeline, const char* item_id,
                                             const char* selection_override);

/* Writes <item>.edit.tnsr, <item>.recon.tnsr and <item>.trace.tnsc. */
DCEDIT_API dcedit_status dcedit_run_edit(dcedit_pipeline* pipeline, const char* item_id);

/* Writes metrics.jsonl into results_dir (NULL = the pipeline output dir);
 * *out_lines receives the number of items evaluated when non-NULL. */
DCEDIT_API dcedit_status dcedit_run_eval(dcedit_pipeline* pipeline, const char* results_dir,
                                         size_t* out_lines);

/* Runs every module invariant suite, printing one line per suite to stdout
 * when verbose is nonzero. Returns DCEDIT_OK only if all suites pass. */
DCEDIT_API dcedit_status dcedit_run_selftest(const dcedit_config* config, int verbose);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* DCEDIT_H */
