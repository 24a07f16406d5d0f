#include "dcedit.h"

#include <exception>
#include <string>

#include "dcedit/error.hpp"
#include "dcedit/pipeline.hpp"
#include "dcedit/selftest.hpp"

namespace {

thread_local std::string g_last_error;

dcedit_status map_code(dcedit::ErrorCode code) {
    using dcedit::ErrorCode;
    switch (code) {
        case ErrorCode::InvalidArgument: return DCEDIT_ERR_INVALID_ARGUMENT;
        case ErrorCode::NotFound: return DCEDIT_ERR_NOT_FOUND;
        case ErrorCode::TraceMismatch: return DCEDIT_ERR_TRACE_MISMATCH;
        case ErrorCode::Numeric: return DCEDIT_ERR_NUMERIC;
        case ErrorCode::Singular: return DCEDIT_ERR_SINGULAR;
        case ErrorCode::Io: return DCEDIT_ERR_IO;
        case ErrorCode::Internal: return DCEDIT_ERR_INTERNAL;
    }
    return DCEDIT_ERR_INTERNAL;
}

template <typename Fn>
dcedit_status guarded(Fn&& fn) {
    g_last_error.clear();
    try {
        fn();
        return DCEDIT_OK;
    } catch (const dcedit::Error& e) {
        g_last_error = e.what();
        return map_code(e.code());
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return DCEDIT_ERR_INTERNAL;
    } catch (...) {
        g_last_error = "unknown failure";
        return DCEDIT_ERR_INTERNAL;
    }
}

dcedit::RunConfig to_run_config(const dcedit_config& c) {
    dcedit::RunConfig config;
    config.model.layers = static_cast<int>(c.layers);
    config.model.heads = static_cast<int>(c.heads);
    config.model.model_dim = static_cast<int>(c.model_dim);
    config.model.text_dim = static_cast<int>(c.text_dim);
    config.model.visual_dim = static_cast<int>(c.visual_dim);
    config.model.seed = c.seed;
    config.control.steps = static_cast<int>(c.steps);
    config.control.cfg_scale = c.cfg_scale;
    config.control.feature_steps = static_cast<int>(c.feature_steps);
    config.control.latent_steps = static_cast<int>(c.latent_steps);
    config.control.r_layers = static_cast<int>(c.r_layers);
    config.control.lambda = c.lambda_percentile;
    config.epsilon = c.epsilon;
    config.grid_h = static_cast<int>(c.grid_h);
    config.grid_w = static_cast<int>(c.grid_w);
    config.grid_c = static_cast<int>(c.grid_channels);
    return config;
}

void from_run_config(const dcedit::RunConfig& config, dcedit_config& c) {
    c.layers = static_cast<uint32_t>(config.model.layers);
    c.heads = static_cast<uint32_t>(config.model.heads);
    c.model_dim = static_cast<uint32_t>(config.model.model_dim);
    c.text_dim = static_cast<uint32_t>(config.model.text_dim);
    c.visual_dim = static_cast<uint32_t>(config.model.visual_dim);
    c.seed = config.model.seed;
    c.steps = static_cast<uint32_t>(config.control.steps);
    c.cfg_scale = config.control.cfg_scale;
    c.feature_steps = static_cast<uint32_t>(config.control.feature_steps);
    c.latent_steps = static_cast<uint32_t>(config.control.latent_steps);
    c.r_layers = static_cast<uint32_t>(config.control.r_layers);
    c.lambda_percentile = config.control.lambda;
    c.epsilon = config.epsilon;
    c.grid_h = static_cast<uint32_t>(config.grid_h);
    c.grid_w = static_cast<uint32_t>(config.grid_w);
    c.grid_channels = static_cast<uint32_t>(config.grid_c);
}

}  // namespace

struct dcedit_pipeline {
    dcedit::Pipeline impl;
};

extern "C" {

const char* dcedit_version(void) { return "0.1.0"; }

const char* dcedit_status_name(dcedit_status status) {
    switch (status) {
        case DCEDIT_OK: return "ok";
        case DCEDIT_ERR_INVALID_ARGUMENT: return "invalid argument";
        case DCEDIT_ERR_NOT_FOUND: return "not found";
        case DCEDIT_ERR_TRACE_MISMATCH: return "trace mismatch";
        case DCEDIT_ERR_NUMERIC: return "numeric failure";
        case DCEDIT_ERR_SINGULAR: return "singular matrix";
        case DCEDIT_ERR_IO: return "i/o failure";
        case DCEDIT_ERR_INTERNAL: return "internal error";
    }
    return "unknown";
}

const char* dcedit_last_error(void) { return g_last_error.c_str(); }

void dcedit_config_init(dcedit_config* config) {
    if (!config) return;
    from_run_config(dcedit::RunConfig{}, *config);
}

dcedit_status dcedit_config_load(const char* path, dcedit_config* config) {
    return guarded([&] {
        if (!path || !config) {
            throw dcedit::Error(dcedit::ErrorCode::InvalidArgument, "null argument");
        }
        dcedit::RunConfig run = to_run_config(*config);
        dcedit::merge_config_file(run, path);
        from_run_config(run, *config);
    });
}

dcedit_status dcedit_pipeline_create(const dcedit_config* config, const char* manifest_path,
                                     const char* output_dir, dcedit_pipeline** out_pipeline) {
    return guarded([&] {
        if (!config || !out_pipeline) {
            throw dcedit::Error(dcedit::ErrorCode::InvalidArgument, "null argument");
        }
        dcedit::RunConfig run = to_run_config(*config);
        if (manifest_path) run.manifest_path = manifest_path;
        if (output_dir) run.output_dir = output_dir;
        *out_pipeline = new dcedit_pipeline{dcedit::Pipeline(std::move(run))};
    });
}

void dcedit_pipeline_destroy(dcedit_pipeline* pipeline) { delete pipeline; }

dcedit_status dcedit_run_localize(dcedit_pipeline* pipeline, const char* item_id,
                                  const char* selection_override) {
    return guarded([&] {
        if (!pipeline || !item_id) {
            throw dcedit::Error(dcedit::ErrorCode::InvalidArgument, "null argument");
        }
        std::optional<std::string> override_spec;
        if (selection_override) override_spec = selection_override;
        pipeline->impl.run_localize(item_id, override_spec);
    });
}

dcedit_status dcedit_run_edit(dcedit_pipeline* pipeline, const char* item_id) {
    return guarded([&] {
        if (!pipeline || !item_id) {
            throw dcedit::Error(dcedit::ErrorCode::InvalidArgument, "null argument");
        }
        pipeline->impl.run_edit(item_id);
    });
}

dcedit_status dcedit_run_eval(dcedit_pipeline* pipeline, const char* results_dir,
                              size_t* out_lines) {
    return guarded([&] {
        if (!pipeline) {
            throw dcedit::Error(dcedit::ErrorCode::InvalidArgument, "null argument");
        }
        std::size_t lines = pipeline->impl.run_eval(results_dir ? results_dir : "");
        if (out_lines) *out_lines = lines;
    });
}

dcedit_status dcedit_run_selftest(const dcedit_config* config, int verbose) {
    return guarded([&] {
        if (!config) {
            throw dcedit::Error(dcedit::ErrorCode::InvalidArgument, "null argument");
        }
        dcedit::RunConfig run = to_run_config(*config);
        dcedit::apply_env_seed_override(run);
        dcedit::SelftestReport report = dcedit::run_selftest(run);
        if (verbose) dcedit::print_selftest_report(report, stdout);
        if (!report.all_passed()) {
            throw dcedit::Error(dcedit::ErrorCode::Internal, "selftest failed");
        }
    });
}

}  // extern "C"
