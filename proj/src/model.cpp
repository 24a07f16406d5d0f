#include "dcedit/model.hpp"

#include <cmath>
#include <string>

#include "dcedit/error.hpp"
#include "dcedit/rng.hpp"

namespace dcedit {

namespace {

enum Role : std::uint64_t {
    kTextQuery = 1,
    kTextKey,
    kTextValue,
    kVisualQuery,
    kVisualKey,
    kVisualValue,
    kTextOut,
    kVisualOut,
    kTimeText,
    kTimeVisual,
    kPatchEmbed,
    kOutputHead,
    kTextEmbed,
    kNullToken,
};

Matrix seeded_matrix(std::uint64_t seed, std::uint64_t slot, std::uint64_t role,
                     std::size_t rows, std::size_t cols, double bound) {
    SplitMix64 gen(stream_key(seed, slot, role));
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = gen.next_symmetric(bound);
    return m;
}

void validate_config(const ModelConfig& c) {
    if (c.layers < 1 || c.heads < 1) {
        throw Error(ErrorCode::InvalidArgument, "model needs at least one layer and one head");
    }
    if (c.model_dim % c.heads != 0) {
        throw Error(ErrorCode::InvalidArgument, "model_dim must be divisible by heads");
    }
    if (c.model_dim < c.heads || c.text_dim < c.heads || c.visual_dim < c.heads) {
        throw Error(ErrorCode::InvalidArgument, "all dims must be >= heads");
    }
}

Matrix slice_cols(const Matrix& m, std::size_t first, std::size_t count) {
    Matrix out(m.rows(), count);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < count; ++j) out(i, j) = m(i, first + j);
    }
    return out;
}

}  // namespace

LatentGrid::LatentGrid(int h_, int w_, int c_, double fill)
    : h(h_), w(w_), c(c_), data(static_cast<std::size_t>(h_) * w_ * c_, fill) {
    if (h_ < 1 || w_ < 1 || c_ < 1) {
        throw Error(ErrorCode::InvalidArgument, "latent grid dimensions must be positive");
    }
}

bool LatentGrid::all_finite() const noexcept {
    for (double x : data) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

LatentGrid add_scaled(const LatentGrid& a, double s, const LatentGrid& b) {
    if (!a.same_shape(b)) {
        throw Error(ErrorCode::InvalidArgument, "latent grid shape mismatch");
    }
    LatentGrid out = a;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += s * b.data[i];
    return out;
}

Model init_model(const ModelConfig& config) {
    validate_config(config);
    const double bound = 1.0 / std::sqrt(static_cast<double>(config.model_dim));
    const auto d = static_cast<std::size_t>(config.model_dim);
    const auto dt = static_cast<std::size_t>(config.text_dim);
    const auto dv = static_cast<std::size_t>(config.visual_dim);

    Model model;
    model.config = config;
    model.layers.reserve(static_cast<std::size_t>(config.layers));
    for (int l = 0; l < config.layers; ++l) {
        const auto slot = static_cast<std::uint64_t>(l);
        LayerWeights w;
        w.text_query = seeded_matrix(config.seed, slot, kTextQuery, dt, d, bound);
        w.text_key = seeded_matrix(config.seed, slot, kTextKey, dt, d, bound);
        w.text_value = seeded_matrix(config.seed, slot, kTextValue, dt, d, bound);
        w.visual_query = seeded_matrix(config.seed, slot, kVisualQuery, dv, d, bound);
        w.visual_key = seeded_matrix(config.seed, slot, kVisualKey, dv, d, bound);
        w.visual_value = seeded_matrix(config.seed, slot, kVisualValue, dv, d, bound);
        w.text_out = seeded_matrix(config.seed, slot, kTextOut, d, dt, bound);
        w.visual_out = seeded_matrix(config.seed, slot, kVisualOut, d, dv, bound);
        model.layers.push_back(std::move(w));
    }
    model.time_text = seeded_matrix(config.seed, 0, kTimeText, 16, dt, bound);
    model.time_visual = seeded_matrix(config.seed, 0, kTimeVisual, 16, dv, bound);
    return model;
}

Matrix patch_embedding(const ModelConfig& config, int channels) {
    if (channels < 1) throw Error(ErrorCode::InvalidArgument, "channel count must be positive");
    const double bound = 1.0 / std::sqrt(static_cast<double>(config.model_dim));
    return seeded_matrix(config.seed, static_cast<std::uint64_t>(channels), kPatchEmbed,
                         static_cast<std::size_t>(channels),
                         static_cast<std::size_t>(config.visual_dim), bound);
}

Matrix output_head(const ModelConfig& config, int channels) {
    if (channels < 1) throw Error(ErrorCode::InvalidArgument, "channel count must be positive");
    const double bound = 1.0 / std::sqrt(static_cast<double>(config.model_dim));
    return seeded_matrix(config.seed, static_cast<std::uint64_t>(channels), kOutputHead,
                         static_cast<std::size_t>(config.visual_dim),
                         static_cast<std::size_t>(channels), bound);
}

Matrix embed_words(const std::vector<std::string>& words, const ModelConfig& config) {
    if (words.empty()) {
        throw Error(ErrorCode::InvalidArgument, "empty prompt");
    }
    Matrix tokens(words.size(), static_cast<std::size_t>(config.text_dim));
    for (std::size_t i = 0; i < words.size(); ++i) {
        SplitMix64 gen(stream_key(config.seed, fnv1a64(words[i]), kTextEmbed));
        for (std::size_t j = 0; j < tokens.cols(); ++j) tokens(i, j) = gen.next_symmetric(1.0);
    }
    return tokens;
}

std::vector<WordSpan> spans_for_words(const std::vector<std::string>& words) {
    std::vector<WordSpan> spans;
    spans.reserve(words.size());
    for (std::size_t i = 0; i < words.size(); ++i) {
        spans.push_back({words[i], static_cast<int>(i), static_cast<int>(i)});
    }
    return spans;
}

Matrix null_prompt_embedding(const ModelConfig& config) {
    Matrix tokens(1, static_cast<std::size_t>(config.text_dim));
    SplitMix64 gen(stream_key(config.seed, 0, kNullToken));
    for (std::size_t j = 0; j < tokens.cols(); ++j) tokens(0, j) = gen.next_symmetric(1.0);
    return tokens;
}

std::vector<WordSpan> null_prompt_spans() { return {{"", 0, 0}}; }

Vector time_embedding16(double t) {
    Vector e(16, 0.0);
    double freq = 3.14159265358979323846;
    for (int k = 0; k < 8; ++k) {
        e[static_cast<std::size_t>(2 * k)] = std::sin(freq * t);
        e[static_cast<std::size_t>(2 * k + 1)] = std::cos(freq * t);
        freq *= 2.0;
    }
    return e;
}

Matrix joint_attention(const Matrix& q_text, const Matrix& k_text,
                       const Matrix& q_visual, const Matrix& k_visual,
                       std::size_t head_dim) {
    if (q_text.cols() != head_dim || k_text.cols() != head_dim ||
        q_visual.cols() != head_dim || k_visual.cols() != head_dim ||
        q_text.rows() != k_text.rows() || q_visual.rows() != k_visual.rows()) {
        throw Error(ErrorCode::InvalidArgument, "joint attention dimension mismatch");
    }
    const std::size_t n = q_text.rows();
    const std::size_t m = q_visual.rows();
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(head_dim));

    auto query_row = [&](std::size_t i) {
        return i < n ? q_text.data() + i * head_dim : q_visual.data() + (i - n) * head_dim;
    };
    auto key_row = [&](std::size_t j) {
        return j < n ? k_text.data() + j * head_dim : k_visual.data() + (j - n) * head_dim;
    };

    Matrix logits(n + m, n + m);
    for (std::size_t i = 0; i < n + m; ++i) {
        const double* q = query_row(i);
        for (std::size_t j = 0; j < n + m; ++j) {
            const double* k = key_row(j);
            double dot = 0.0;
            for (std::size_t x = 0; x < head_dim; ++x) dot += q[x] * k[x];
            logits(i, j) = dot * inv_sqrt_d;
        }
    }
    return softmax_rows(logits);
}

AttentionQuadrants split_quadrants(const JointAttentionRecord& record) {
    const auto n = static_cast<std::size_t>(record.layout.n_text);
    const auto m = static_cast<std::size_t>(record.layout.n_visual);
    if (record.matrix.rows() != n + m || record.matrix.cols() != n + m) {
        throw Error(ErrorCode::InvalidArgument, "attention record shape does not match layout");
    }
    AttentionQuadrants q{Matrix(n, n), Matrix(n, m), Matrix(m, n), Matrix(m, m)};
    for (std::size_t i = 0; i < n + m; ++i) {
        for (std::size_t j = 0; j < n + m; ++j) {
            double v = record.matrix(i, j);
            if (i < n && j < n) q.text_text(i, j) = v;
            else if (i < n) q.text_visual(i, j - n) = v;
            else if (j < n) q.visual_text(i - n, j) = v;
            else q.visual_visual(i - n, j - n) = v;
        }
    }
    return q;
}

TokenStreams layer_forward(const TokenStreams& in, const LayerWeights& weights,
                           const TokenLayout& layout, int layer_index, int heads,
                           const LayerRun& run) {
    const std::size_t n = in.text.rows();
    const std::size_t m = in.visual.rows();
    if (static_cast<int>(n) != layout.n_text || static_cast<int>(m) != layout.n_visual) {
        throw Error(ErrorCode::InvalidArgument, "token streams do not match layout");
    }
    const std::size_t d = weights.text_query.cols();
    if (d % static_cast<std::size_t>(heads) != 0) {
        throw Error(ErrorCode::InvalidArgument, "model_dim must be divisible by heads");
    }
    const std::size_t head_dim = d / static_cast<std::size_t>(heads);

    Matrix q_text = matmul(in.text, weights.text_query);
    Matrix k_text = matmul(in.text, weights.text_key);
    Matrix q_visual = matmul(in.visual, weights.visual_query);
    Matrix k_visual = matmul(in.visual, weights.visual_key);

    // Joint value matrix, text rows first; this is what feature-level control
    // rewrites and what value capture stores.
    Matrix values(n + m, d);
    {
        Matrix v_text = matmul(in.text, weights.text_value);
        Matrix v_visual = matmul(in.visual, weights.visual_value);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) values(i, j) = v_text(i, j);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < d; ++j) values(n + i, j) = v_visual(i, j);
    }
    if (run.value_hook && *run.value_hook) (*run.value_hook)(layer_index, values);
    if (run.capture_values && run.capture) run.capture->values.push_back({layer_index, values});

    if (!q_text.all_finite() || !k_text.all_finite() || !q_visual.all_finite() ||
        !k_visual.all_finite() || !values.all_finite()) {
        throw Error(ErrorCode::Numeric, "numeric overflow in layer " + std::to_string(layer_index));
    }

    Matrix heads_out(n + m, d);
    for (int h = 0; h < heads; ++h) {
        const std::size_t off = static_cast<std::size_t>(h) * head_dim;
        Matrix attn;
        try {
            attn = joint_attention(slice_cols(q_text, off, head_dim),
                                   slice_cols(k_text, off, head_dim),
                                   slice_cols(q_visual, off, head_dim),
                                   slice_cols(k_visual, off, head_dim), head_dim);
        } catch (const Error&) {
            // finite projections can still overflow in the score products
            throw Error(ErrorCode::Numeric,
                        "numeric overflow in layer " + std::to_string(layer_index));
        }
        if (run.capture_attention && run.capture) {
            run.capture->records.push_back({layer_index, h, attn, layout});
        }
        for (std::size_t i = 0; i < n + m; ++i) {
            for (std::size_t x = 0; x < head_dim; ++x) {
                double acc = 0.0;
                for (std::size_t j = 0; j < n + m; ++j) acc += attn(i, j) * values(j, off + x);
                heads_out(i, off + x) = acc;
            }
        }
    }

    TokenStreams out;
    {
        Matrix text_block(n, d), visual_block(m, d);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) text_block(i, j) = heads_out(i, j);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < d; ++j) visual_block(i, j) = heads_out(n + i, j);
        out.text = add(in.text, matmul(text_block, weights.text_out));
        out.visual = add(in.visual, matmul(visual_block, weights.visual_out));
    }
    if (!out.text.all_finite() || !out.visual.all_finite()) {
        throw Error(ErrorCode::Numeric, "numeric overflow in layer " + std::to_string(layer_index));
    }
    return out;
}

VelocityResult velocity(const Model& model, const LatentGrid& z, const Matrix& text_tokens,
                        const std::vector<WordSpan>& spans, double t,
                        const VelocityRequest& request) {
    if (!(t >= 0.0 && t <= 1.0)) {
        throw Error(ErrorCode::InvalidArgument, "timestep outside [0,1]");
    }
    if (!z.all_finite()) {
        throw Error(ErrorCode::InvalidArgument, "non-finite latent");
    }
    if (text_tokens.cols() != static_cast<std::size_t>(model.config.text_dim)) {
        throw Error(ErrorCode::InvalidArgument, "text token width does not match text_dim");
    }
    const std::size_t m = static_cast<std::size_t>(z.h) * static_cast<std::size_t>(z.w);
    const std::size_t n = text_tokens.rows();

    // One visual token per grid cell, in row-major cell order.
    Matrix cells(m, static_cast<std::size_t>(z.c));
    for (std::size_t i = 0; i < m; ++i)
        for (int ch = 0; ch < z.c; ++ch)
            cells(i, static_cast<std::size_t>(ch)) = z.data[i * static_cast<std::size_t>(z.c) + ch];

    TokenStreams streams;
    streams.visual = matmul(cells, patch_embedding(model.config, z.c));
    streams.text = text_tokens;

    Vector te = time_embedding16(t);
    Vector text_shift = matvec(transpose(model.time_text), te);
    Vector visual_shift = matvec(transpose(model.time_visual), te);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < streams.text.cols(); ++j) streams.text(i, j) += text_shift[j];
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < streams.visual.cols(); ++j) streams.visual(i, j) += visual_shift[j];

    TokenLayout layout{static_cast<int>(n), static_cast<int>(m), z.h, z.w, spans};

    VelocityResult result;
    const int first_value_layer = model.config.layers - request.capture_value_layers;
    for (int l = 0; l < model.config.layers; ++l) {
        LayerRun run;
        run.capture_attention = request.capture_attention;
        run.capture_values = l >= first_value_layer;
        run.capture = &result.capture;
        run.value_hook = request.value_hook;
        streams = layer_forward(streams, model.layers[static_cast<std::size_t>(l)], layout, l,
                                model.config.heads, run);
    }

    Matrix out_cells = matmul(streams.visual, output_head(model.config, z.c));
    result.velocity = LatentGrid(z.h, z.w, z.c);
    for (std::size_t i = 0; i < m; ++i)
        for (int ch = 0; ch < z.c; ++ch)
            result.velocity.data[i * static_cast<std::size_t>(z.c) + ch] =
                out_cells(i, static_cast<std::size_t>(ch));
    return result;
}

LatentGrid cfg_combine(const LatentGrid& v_cond, const LatentGrid& v_uncond, double scale) {
    if (!v_cond.same_shape(v_uncond)) {
        throw Error(ErrorCode::InvalidArgument, "cfg velocity shape mismatch");
    }
    LatentGrid out = v_uncond;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] = v_uncond.data[i] + scale * (v_cond.data[i] - v_uncond.data[i]);
    }
    return out;
}

}  // namespace dcedit
