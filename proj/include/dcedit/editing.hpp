#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "dcedit/localization.hpp"
#include "dcedit/model.hpp"
#include "dcedit/numeric.hpp"

namespace dcedit {

/// Uniform timestep grid t_i = i/K. t=0 is the clean latent, t=1 is noise;
/// inversion ascends the grid, sampling descends it.
struct Schedule {
    std::vector<double> times;  // size K+1, times[0] = 0, times[K] = 1

    int steps() const noexcept { return static_cast<int>(times.size()) - 1; }
};

Schedule make_schedule(int steps);

struct ControlConfig {
    int steps = 8;          // K
    double cfg_scale = 3.0;
    int feature_steps = 1;  // f: value fusion during the first f sampling steps
    int latent_steps = 3;   // b: latent blending during the first b sampling steps
    double lambda = 80.0;   // percentile for mask binarization
    int r_layers = 0;       // value capture/fusion depth; 0 = ceil(layers/2)
};

int resolve_r_layers(const ControlConfig& config, int model_layers);

/// Per-visual-token {0,1} mask.
struct BinaryMask {
    std::vector<std::uint8_t> bits;
    int grid_h = 0;
    int grid_w = 0;
};

/// Values captured by one inversion step: the joint value matrices of the
/// trailing r layers, keyed by layer index, at evaluation timestep t.
struct StepValues {
    double t = 0.0;
    std::map<int, Matrix> by_layer;
};

/// Everything the sampling pass reuses from inversion: all intermediate
/// latents, the per-step combined velocities, and the stored value tensors.
struct EditTrace {
    Schedule schedule;
    std::vector<LatentState> latents;    // K+1, latents[i].t == schedule.times[i]
    std::vector<LatentGrid> velocities;  // K, the cfg-combined velocity of step i
    std::vector<StepValues> values;      // K, values[i].t == schedule.times[i]
    int r_layers = 0;

    const StepValues& values_at(double t) const;
};

/// Velocity-field abstraction the integrators run against; the production
/// implementation wraps the toy model, tests substitute analytic fields.
class FlowModel {
public:
    enum class Prompt { Source, Target, Uncond };

    struct Injection {
        const std::map<int, Matrix>* stored = nullptr;
        const RefinedMap* map = nullptr;
    };

    virtual ~FlowModel() = default;

    /// capture, when non-null, receives the trailing-layer value tensors of
    /// this evaluation. inject, when non-null, requests feature-level fusion
    /// against stored values. Both apply to the prompt-conditioned forward
    /// only; implementations without internals ignore them.
    virtual LatentGrid velocity_at(const LatentState& z, double t, Prompt prompt,
                                   StepValues* capture, const Injection* inject) = 0;
};

/// FlowModel over the toy model with bound source/target prompts and the
/// reserved null prompt for the unconditional branch.
class MmditFlow : public FlowModel {
public:
    MmditFlow(const Model& model, std::vector<std::string> source_words,
              std::vector<std::string> target_words, int r_layers);

    LatentGrid velocity_at(const LatentState& z, double t, Prompt prompt,
                           StepValues* capture, const Injection* inject) override;

    const std::vector<WordSpan>& source_spans() const { return source_spans_; }
    const Matrix& source_tokens() const { return source_tokens_; }

private:
    const Model& model_;
    Matrix source_tokens_, target_tokens_, null_tokens_;
    std::vector<WordSpan> source_spans_, target_spans_, null_spans_;
    int r_layers_;
};

/// Euler inversion from the clean latent to noise:
/// Z_{t_{i+1}} = Z_{t_i} + (t_{i+1} - t_i) * v(Z_{t_i}, t_i), with the
/// velocity cfg-combined from the source-prompt and unconditional branches.
/// Records every latent, every combined velocity, and the trailing-layer
/// values of the conditional branch.
struct InvertResult {
    LatentState z_noise;
    EditTrace trace;
};

InvertResult invert(FlowModel& flow, const LatentState& z0, const Schedule& schedule,
                    double cfg_scale, int r_layers);

/// bit = 1 where |value| >= the lambda-th percentile of the map values.
BinaryMask binarize_map(const RefinedMap& map, double lambda);

/// Soft fusion of value tensors: visual rows (the trailing map-length rows)
/// blend as m*sample + (1-m)*stored with the per-token map value broadcast
/// across all channels; text rows pass through from the sampling branch.
ValueTensor feature_fuse(const ValueTensor& sample, const ValueTensor& stored,
                         const RefinedMap& map);

/// Per-cell selection: mask=1 keeps the sampling latent, mask=0 restores the
/// stored latent; the bit broadcasts over channels.
LatentState latent_blend(const LatentState& z_sample, const LatentState& z_stored,
                         const BinaryMask& mask);

/// Euler sampling from the inverted noise with the target prompt, applying
/// feature-level control for the first `feature_steps` steps (value fusion in
/// the trailing r layers against the stored values at the step's destination
/// timestep) and latent-level control for the first `latent_steps` steps
/// (post-update blending against the stored latent at the same timestep).
/// mask_override, when non-null, replaces the binarized map.
LatentState sample_edit(FlowModel& flow, const EditTrace& trace, const RefinedMap& map,
                        const ControlConfig& config, const BinaryMask* mask_override = nullptr);

/// Replays sampling with the velocities cached during inversion, so every
/// Euler step exactly undoes its inversion counterpart. Returns the source
/// latent up to floating-point reassociation.
LatentState reconstruct_cached(const EditTrace& trace);

}  // namespace dcedit
