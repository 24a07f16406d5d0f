#include "dcedit/editing.hpp"

#include <cmath>
#include <string>
#include <utility>

#include "dcedit/error.hpp"

namespace dcedit {

Schedule make_schedule(int steps) {
    if (steps < 1) {
        throw Error(ErrorCode::InvalidArgument, "schedule needs at least one step");
    }
    Schedule s;
    s.times.resize(static_cast<std::size_t>(steps) + 1);
    for (int i = 0; i <= steps; ++i) {
        s.times[static_cast<std::size_t>(i)] = static_cast<double>(i) / static_cast<double>(steps);
    }
    return s;
}

int resolve_r_layers(const ControlConfig& config, int model_layers) {
    int r = config.r_layers > 0 ? config.r_layers : (model_layers + 1) / 2;
    if (r > model_layers) {
        throw Error(ErrorCode::InvalidArgument, "r_layers exceeds the layer count");
    }
    return r;
}

const StepValues& EditTrace::values_at(double t) const {
    for (const auto& v : values) {
        if (v.t == t) return v;
    }
    throw Error(ErrorCode::TraceMismatch,
                "no stored values at timestep " + std::to_string(t));
}

MmditFlow::MmditFlow(const Model& model, std::vector<std::string> source_words,
                     std::vector<std::string> target_words, int r_layers)
    : model_(model),
      source_tokens_(embed_words(source_words, model.config)),
      target_tokens_(embed_words(target_words, model.config)),
      null_tokens_(null_prompt_embedding(model.config)),
      source_spans_(spans_for_words(source_words)),
      target_spans_(spans_for_words(target_words)),
      null_spans_(null_prompt_spans()),
      r_layers_(r_layers) {
    if (r_layers_ < 0 || r_layers_ > model.config.layers) {
        throw Error(ErrorCode::InvalidArgument, "r_layers outside [0, layers]");
    }
}

LatentGrid MmditFlow::velocity_at(const LatentState& z, double t, Prompt prompt,
                                  StepValues* capture, const Injection* inject) {
    const Matrix* tokens = &null_tokens_;
    const std::vector<WordSpan>* spans = &null_spans_;
    if (prompt == Prompt::Source) {
        tokens = &source_tokens_;
        spans = &source_spans_;
    } else if (prompt == Prompt::Target) {
        tokens = &target_tokens_;
        spans = &target_spans_;
    }

    VelocityRequest req;
    ValueHook hook;
    if (prompt != Prompt::Uncond) {
        if (capture) req.capture_value_layers = r_layers_;
        if (inject && inject->stored) {
            hook = [inject](int layer, Matrix& values) {
                auto it = inject->stored->find(layer);
                if (it == inject->stored->end()) return;
                ValueTensor fused = feature_fuse({layer, values}, {layer, it->second}, *inject->map);
                values = std::move(fused.values);
            };
            req.value_hook = &hook;
        }
    }
    VelocityResult res = velocity(model_, z.grid, *tokens, *spans, t, req);
    if (capture && prompt != Prompt::Uncond) {
        capture->t = t;
        for (auto& v : res.capture.values) capture->by_layer.emplace(v.layer, std::move(v.values));
    }
    return std::move(res.velocity);
}

InvertResult invert(FlowModel& flow, const LatentState& z0, const Schedule& schedule,
                    double cfg_scale, int r_layers) {
    if (z0.t != 0.0) {
        throw Error(ErrorCode::InvalidArgument, "inversion must start at t=0");
    }
    const int k = schedule.steps();
    InvertResult result;
    result.trace.schedule = schedule;
    result.trace.r_layers = r_layers;
    result.trace.latents.reserve(static_cast<std::size_t>(k) + 1);
    result.trace.latents.push_back(z0);
    result.trace.velocities.reserve(static_cast<std::size_t>(k));
    result.trace.values.reserve(static_cast<std::size_t>(k));

    LatentState z = z0;
    for (int i = 0; i < k; ++i) {
        double t_now = schedule.times[static_cast<std::size_t>(i)];
        double t_next = schedule.times[static_cast<std::size_t>(i) + 1];
        StepValues captured;
        LatentGrid v_cond = flow.velocity_at(z, t_now, FlowModel::Prompt::Source, &captured, nullptr);
        LatentGrid v_uncond = flow.velocity_at(z, t_now, FlowModel::Prompt::Uncond, nullptr, nullptr);
        LatentGrid v = cfg_combine(v_cond, v_uncond, cfg_scale);

        z.grid = add_scaled(z.grid, t_next - t_now, v);
        z.t = t_next;
        if (!z.grid.all_finite()) {
            throw Error(ErrorCode::Numeric, "non-finite latent at inversion step " + std::to_string(i));
        }
        captured.t = t_now;
        result.trace.velocities.push_back(std::move(v));
        result.trace.values.push_back(std::move(captured));
        result.trace.latents.push_back(z);
    }
    result.z_noise = z;
    return result;
}

BinaryMask binarize_map(const RefinedMap& map, double lambda) {
    double threshold = percentile_threshold(map.values, lambda);
    BinaryMask mask;
    mask.grid_h = map.grid_h;
    mask.grid_w = map.grid_w;
    mask.bits.resize(map.values.size());
    for (std::size_t i = 0; i < map.values.size(); ++i) {
        mask.bits[i] = std::abs(map.values[i]) >= threshold ? 1 : 0;
    }
    return mask;
}

ValueTensor feature_fuse(const ValueTensor& sample, const ValueTensor& stored,
                         const RefinedMap& map) {
    if (sample.layer != stored.layer) {
        throw Error(ErrorCode::InvalidArgument, "value tensors come from different layers");
    }
    const std::size_t m = map.values.size();
    if (sample.values.cols() != stored.values.cols() || sample.values.rows() < m ||
        stored.values.rows() < m) {
        throw Error(ErrorCode::InvalidArgument, "value tensor shape mismatch");
    }
    ValueTensor out = sample;  // text rows stay with the sampling branch
    const std::size_t sample_off = sample.values.rows() - m;
    const std::size_t stored_off = stored.values.rows() - m;
    for (std::size_t i = 0; i < m; ++i) {
        double mi = map.values[i];
        for (std::size_t j = 0; j < out.values.cols(); ++j) {
            out.values(sample_off + i, j) = mi * sample.values(sample_off + i, j) +
                                            (1.0 - mi) * stored.values(stored_off + i, j);
        }
    }
    return out;
}

LatentState latent_blend(const LatentState& z_sample, const LatentState& z_stored,
                         const BinaryMask& mask) {
    if (!z_sample.grid.same_shape(z_stored.grid)) {
        throw Error(ErrorCode::InvalidArgument, "latent blend shape mismatch");
    }
    if (z_sample.t != z_stored.t) {
        throw Error(ErrorCode::InvalidArgument, "latent blend timestep mismatch");
    }
    if (mask.grid_h != z_sample.grid.h || mask.grid_w != z_sample.grid.w) {
        throw Error(ErrorCode::InvalidArgument, "mask does not match the latent grid");
    }
    LatentState out = z_sample;
    const auto c = static_cast<std::size_t>(out.grid.c);
    for (std::size_t cell = 0; cell < mask.bits.size(); ++cell) {
        if (mask.bits[cell]) continue;
        for (std::size_t ch = 0; ch < c; ++ch) {
            out.grid.data[cell * c + ch] = z_stored.grid.data[cell * c + ch];
        }
    }
    return out;
}

LatentState sample_edit(FlowModel& flow, const EditTrace& trace, const RefinedMap& map,
                        const ControlConfig& config, const BinaryMask* mask_override) {
    const int k = trace.schedule.steps();
    if (config.steps != k || trace.latents.size() != static_cast<std::size_t>(k) + 1) {
        throw Error(ErrorCode::TraceMismatch, "trace does not match the configured schedule");
    }
    if (config.feature_steps < 0 || config.feature_steps > k || config.latent_steps < 0 ||
        config.latent_steps > k) {
        throw Error(ErrorCode::InvalidArgument, "control step counts outside [0, K]");
    }
    BinaryMask mask;
    if (config.latent_steps > 0) {
        mask = mask_override ? *mask_override : binarize_map(map, config.lambda);
    }

    LatentState z = trace.latents.back();
    for (int i = k; i >= 1; --i) {
        const int step = k - i;  // 0-based sampling step
        double t_now = trace.schedule.times[static_cast<std::size_t>(i)];
        double t_prev = trace.schedule.times[static_cast<std::size_t>(i) - 1];

        FlowModel::Injection injection;
        const FlowModel::Injection* inject = nullptr;
        if (step < config.feature_steps) {
            // The inversion step t_{i-1} -> t_i evaluated (and stored) its
            // values at t_{i-1}; that is this step's partner.
            injection.stored = &trace.values_at(t_prev).by_layer;
            injection.map = &map;
            inject = &injection;
        }
        LatentGrid v_cond = flow.velocity_at(z, t_now, FlowModel::Prompt::Target, nullptr, inject);
        LatentGrid v_uncond = flow.velocity_at(z, t_now, FlowModel::Prompt::Uncond, nullptr, nullptr);
        LatentGrid v = cfg_combine(v_cond, v_uncond, config.cfg_scale);

        z.grid = add_scaled(z.grid, t_prev - t_now, v);
        z.t = t_prev;
        if (!z.grid.all_finite()) {
            throw Error(ErrorCode::Numeric,
                        "non-finite latent at sampling step " + std::to_string(step));
        }
        if (step < config.latent_steps) {
            z = latent_blend(z, trace.latents[static_cast<std::size_t>(i) - 1], mask);
        }
    }
    return z;
}

LatentState reconstruct_cached(const EditTrace& trace) {
    const int k = trace.schedule.steps();
    if (trace.velocities.size() != static_cast<std::size_t>(k) ||
        trace.latents.size() != static_cast<std::size_t>(k) + 1) {
        throw Error(ErrorCode::InvalidArgument, "trace is missing cached velocities");
    }
    LatentState z = trace.latents.back();
    for (int i = k; i >= 1; --i) {
        double t_now = trace.schedule.times[static_cast<std::size_t>(i)];
        double t_prev = trace.schedule.times[static_cast<std::size_t>(i) - 1];
        z.grid = add_scaled(z.grid, t_prev - t_now, trace.velocities[static_cast<std::size_t>(i) - 1]);
        z.t = t_prev;
    }
    return z;
}

}  // namespace dcedit
