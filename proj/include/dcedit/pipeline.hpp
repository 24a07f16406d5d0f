#pragma once

#include <cstddef>
#include <optional>
#include <string>

#include "dcedit/bench.hpp"
#include "dcedit/editing.hpp"
#include "dcedit/model.hpp"

namespace dcedit {

struct RunConfig {
    ModelConfig model;
    ControlConfig control;
    double epsilon = 1e-6;  // ridge regularization for the textual inverse
    int grid_h = 12;
    int grid_w = 12;
    int grid_c = 4;
    std::string manifest_path;
    std::string output_dir = ".";
};

/// Merges the JSON config file at `path` onto `config`; absent keys keep
/// their current values. Keys: layers, heads, model_dim, text_dim,
/// visual_dim, seed, steps, cfg, feature_steps, latent_steps, r_layers,
/// lambda, epsilon, grid_h, grid_w, grid_c, manifest, out.
void merge_config_file(RunConfig& config, const std::string& path);

/// DCEDIT_SEED, when set, overrides the model seed.
void apply_env_seed_override(RunConfig& config);

/// Synthetic source latent: "seed:<n>" draws a standard-normal grid from
/// splitmix64(n); any other ref is read as a latent tensor file whose dims
/// must match the configured grid.
LatentGrid load_source_latent(const std::string& image_ref, int h, int w, int c,
                              const std::string& base_dir);

/// Latents stand in for images at desk scale; a channel value x maps to the
/// gray pixel clamp(0.5 + x/6, 0, 1).
double latent_to_gray(double x);
GrayImage latent_channel_image(const LatentGrid& grid, int channel);

/// Resolves the token selection for an item: an explicit override
/// (comma-separated indices or words), else the annotated blend words, else
/// the source side of diff_prompts.
Selection selection_for_item(const BenchmarkItem& item,
                             const std::optional<std::string>& override_spec);

/// Weight checkpoint in the tensor archive format, for fixture pinning.
void dump_model_weights(const Model& model, const std::string& path);

void save_trace(const EditTrace& trace, std::uint64_t model_seed, const std::string& path);
EditTrace load_trace(const std::string& path, const RunConfig& config);

/// Orchestrates localize -> edit -> eval over manifest items. Holds the model
/// and manifest immutably; the run methods only write files under the output
/// directory (atomically), so a pipeline can serve concurrent callers as long
/// as they target different items or directories.
class Pipeline {
public:
    explicit Pipeline(RunConfig config);

    const RunConfig& config() const noexcept { return config_; }
    const Model& model() const noexcept { return model_; }
    const Manifest& manifest() const;

    /// Writes <id>.map.tnsr and <id>.map.png.
    void run_localize(const std::string& item_id,
                      const std::optional<std::string>& selection_override = std::nullopt);

    /// Writes <id>.edit.tnsr, <id>.recon.tnsr and <id>.trace.tnsc. Reuses an
    /// existing valid trace; reuses <id>.map.tnsr when present, otherwise
    /// computes the map in memory.
    void run_edit(const std::string& item_id);

    /// Writes metrics.jsonl into results_dir (default: the output dir), one
    /// line per item with artifacts present. Returns the line count.
    std::size_t run_eval(const std::string& results_dir = {});

private:
    const BenchmarkItem& require_item(const std::string& item_id) const;
    RefinedMap compute_map(const BenchmarkItem& item,
                           const std::optional<std::string>& selection_override) const;
    EditTrace obtain_trace(const BenchmarkItem& item, const std::string& trace_path) const;

    RunConfig config_;
    Model model_;
    std::optional<Manifest> manifest_;
    std::string manifest_dir_;
};

}  // namespace dcedit
