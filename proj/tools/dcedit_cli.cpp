// Command-line front end for the dcedit shared library. Talks to the C API
// only; exit codes: 0 success, 2 usage errors / missing inputs, 3 trace
// mismatch, 1 anything else.

#include <cstdio>
#include <string>

#include <CLI11.hpp>

#include "dcedit.h"

namespace {

int exit_code_for(dcedit_status status) {
    switch (status) {
        case DCEDIT_OK: return 0;
        case DCEDIT_ERR_INVALID_ARGUMENT:
        case DCEDIT_ERR_NOT_FOUND: return 2;
        case DCEDIT_ERR_TRACE_MISMATCH: return 3;
        default: return 1;
    }
}

int report(dcedit_status status, const char* verb) {
    if (status == DCEDIT_OK) return 0;
    std::fprintf(stderr, "dcedit %s: %s (%s)\n", verb, dcedit_last_error(),
                 dcedit_status_name(status));
    return exit_code_for(status);
}

struct PipelineHandle {
    dcedit_pipeline* ptr = nullptr;
    ~PipelineHandle() { dcedit_pipeline_destroy(ptr); }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dcedit - localized text-guided editing on a toy diffusion transformer"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(dcedit_version()));

    dcedit_config config;
    dcedit_config_init(&config);

    std::string config_path, manifest, out_dir = ".", item_id, select_spec, results_dir;

    app.add_option("--config", config_path, "JSON config file merged before flag overrides");
    app.add_option("--manifest", manifest, "benchmark manifest JSON");
    app.add_option("--out", out_dir, "output directory");
    app.add_option("--steps", config.steps, "inversion/sampling step count K");
    app.add_option("--cfg", config.cfg_scale, "classifier-free guidance scale");
    app.add_option("--lambda", config.lambda_percentile, "mask binarization percentile");
    app.add_option("--feature-steps", config.feature_steps, "feature-control step count f");
    app.add_option("--latent-steps", config.latent_steps, "latent-control step count b");
    app.add_option("--r-layers", config.r_layers, "layers under feature control (0 = half)");
    app.add_option("--epsilon", config.epsilon, "ridge regularization for the textual inverse");
    app.add_option("--seed", config.seed, "model seed");
    app.add_option("--item", item_id, "benchmark item id");

    CLI::App* cmd_localize = app.add_subcommand("localize", "extract and refine the attention map");
    cmd_localize->add_option("--select", select_spec,
                             "selection override: comma-separated token indices or words");
    CLI::App* cmd_edit = app.add_subcommand("edit", "invert, control, and sample the edit");
    CLI::App* cmd_eval = app.add_subcommand("eval", "score maps and edits into metrics.jsonl");
    cmd_eval->add_option("--results", results_dir, "results directory (default: --out)");
    CLI::App* cmd_selftest = app.add_subcommand("selftest", "run the module invariant suites");

    // Flag overrides apply on top of --config, so parse flags first, then
    // reload: remember which numeric flags the user actually passed.
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    if (!config_path.empty()) {
        dcedit_config file_config;
        dcedit_config_init(&file_config);
        dcedit_status status = dcedit_config_load(config_path.c_str(), &file_config);
        if (status != DCEDIT_OK) return report(status, "config");
        // Start from the file, then re-apply whichever flags were given.
        dcedit_config merged = file_config;
        if (app.count("--steps")) merged.steps = config.steps;
        if (app.count("--cfg")) merged.cfg_scale = config.cfg_scale;
        if (app.count("--lambda")) merged.lambda_percentile = config.lambda_percentile;
        if (app.count("--feature-steps")) merged.feature_steps = config.feature_steps;
        if (app.count("--latent-steps")) merged.latent_steps = config.latent_steps;
        if (app.count("--r-layers")) merged.r_layers = config.r_layers;
        if (app.count("--epsilon")) merged.epsilon = config.epsilon;
        if (app.count("--seed")) merged.seed = config.seed;
        config = merged;
    }

    if (cmd_selftest->parsed()) {
        return report(dcedit_run_selftest(&config, /*verbose=*/1), "selftest");
    }

    PipelineHandle pipeline;
    dcedit_status status = dcedit_pipeline_create(&config, manifest.empty() ? nullptr : manifest.c_str(),
                                                  out_dir.c_str(), &pipeline.ptr);
    if (status != DCEDIT_OK) return report(status, "setup");

    if (cmd_localize->parsed()) {
        if (item_id.empty()) {
            std::fprintf(stderr, "dcedit localize: --item is required\n");
            return 2;
        }
        return report(dcedit_run_localize(pipeline.ptr, item_id.c_str(),
                                          select_spec.empty() ? nullptr : select_spec.c_str()),
                      "localize");
    }
    if (cmd_edit->parsed()) {
        if (item_id.empty()) {
            std::fprintf(stderr, "dcedit edit: --item is required\n");
            return 2;
        }
        return report(dcedit_run_edit(pipeline.ptr, item_id.c_str()), "edit");
    }
    if (cmd_eval->parsed()) {
        size_t lines = 0;
        status = dcedit_run_eval(pipeline.ptr, results_dir.empty() ? nullptr : results_dir.c_str(),
                                 &lines);
        if (status == DCEDIT_OK) {
            std::printf("evaluated %zu item(s)\n", lines);
        }
        return report(status, "eval");
    }
    return 2;
}
