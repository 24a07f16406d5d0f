#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dcedit/numeric.hpp"

namespace dcedit {

/// Configuration of the toy multimodal DiT. The text and visual streams keep
/// their own widths (text_dim / visual_dim); every layer projects both into
/// the shared model_dim for joint attention and back again.
struct ModelConfig {
    int layers = 4;
    int heads = 2;
    int model_dim = 16;   // shared attention dim, divisible by heads
    int text_dim = 12;
    int visual_dim = 20;
    std::uint64_t seed = 42;
};

struct WordSpan {
    std::string word;
    int first = 0;  // inclusive token index range
    int last = 0;
};

struct TokenLayout {
    int n_text = 0;
    int n_visual = 0;
    int grid_h = 0;
    int grid_w = 0;
    std::vector<WordSpan> word_spans;
};

struct LayerWeights {
    Matrix text_query, text_key, text_value;        // text_dim x model_dim
    Matrix visual_query, visual_key, visual_value;  // visual_dim x model_dim
    Matrix text_out;    // model_dim x text_dim
    Matrix visual_out;  // model_dim x visual_dim
};

/// One per (layer, head): the full joint attention matrix over the
/// concatenated token sequence, text tokens first. Rows sum to 1.
struct JointAttentionRecord {
    int layer = 0;
    int head = 0;
    Matrix matrix;  // (n_text + n_visual)^2
    TokenLayout layout;
};

/// Pre-attention value rows of one layer, heads side by side:
/// (n_text + n_visual) x model_dim, text rows first.
struct ValueTensor {
    int layer = 0;
    Matrix values;
};

/// Flattened latent grid; storage order is (y, x, channel).
struct LatentGrid {
    int h = 0, w = 0, c = 0;
    std::vector<double> data;

    LatentGrid() = default;
    LatentGrid(int h_, int w_, int c_, double fill = 0.0);

    double& at(int y, int x, int ch) { return data[(static_cast<std::size_t>(y) * w + x) * c + ch]; }
    double at(int y, int x, int ch) const { return data[(static_cast<std::size_t>(y) * w + x) * c + ch]; }

    std::size_t size() const noexcept { return data.size(); }
    bool all_finite() const noexcept;
    bool same_shape(const LatentGrid& o) const noexcept { return h == o.h && w == o.w && c == o.c; }

    bool operator==(const LatentGrid&) const = default;
};

struct LatentState {
    LatentGrid grid;
    double t = 0.0;
};

/// out = a + s * b
LatentGrid add_scaled(const LatentGrid& a, double s, const LatentGrid& b);

struct Model {
    ModelConfig config;
    std::vector<LayerWeights> layers;
    Matrix time_text;    // 16 x text_dim
    Matrix time_visual;  // 16 x visual_dim
};

/// Populates all weights from splitmix64 streams keyed by (seed, layer, role),
/// uniform in [-1/sqrt(model_dim), 1/sqrt(model_dim)). Two inits with equal
/// configs are bit-identical within one build.
Model init_model(const ModelConfig& config);

/// The (channels -> visual_dim) patch embedding and (visual_dim -> channels)
/// output head depend on the latent channel count, so they are derived on
/// demand from the same seeded streams.
Matrix patch_embedding(const ModelConfig& config, int channels);
Matrix output_head(const ModelConfig& config, int channels);

/// One token per word; embeddings are keyed by (model seed, word spelling).
Matrix embed_words(const std::vector<std::string>& words, const ModelConfig& config);
std::vector<WordSpan> spans_for_words(const std::vector<std::string>& words);

/// Single reserved token standing in for the empty prompt of the
/// classifier-free-guidance branch.
Matrix null_prompt_embedding(const ModelConfig& config);
std::vector<WordSpan> null_prompt_spans();

/// 16-dim sinusoidal timestep features: sin/cos pairs at frequencies pi*2^k.
Vector time_embedding16(double t);

/// Softmax([Q_T + Q_V][K_T + K_V]^T / sqrt(head_dim)) over the concatenated
/// token sequence, text rows first. head_dim is the column count of all four
/// inputs.
Matrix joint_attention(const Matrix& q_text, const Matrix& k_text,
                       const Matrix& q_visual, const Matrix& k_visual,
                       std::size_t head_dim);

struct AttentionQuadrants {
    Matrix text_text;      // N x N
    Matrix text_visual;    // N x M
    Matrix visual_text;    // M x N
    Matrix visual_visual;  // M x M
};

/// Pure index slicing, no renormalization.
AttentionQuadrants split_quadrants(const JointAttentionRecord& record);

struct TokenStreams {
    Matrix text;    // N x text_dim
    Matrix visual;  // M x visual_dim
};

/// Called with (layer index, joint value matrix) right after the value
/// projection; may rewrite the values in place. Used for feature-level
/// control during edit sampling.
using ValueHook = std::function<void(int layer, Matrix& values)>;

struct Capture {
    std::vector<JointAttentionRecord> records;
    std::vector<ValueTensor> values;
};

struct LayerRun {
    bool capture_attention = false;
    bool capture_values = false;
    Capture* capture = nullptr;
    const ValueHook* value_hook = nullptr;
};

/// One joint-attention block: per-modality projections, per-head joint
/// attention, head concatenation, per-modality output projection, residual
/// add. With all-zero weights this is the identity on both streams.
TokenStreams layer_forward(const TokenStreams& in, const LayerWeights& weights,
                           const TokenLayout& layout, int layer_index, int heads,
                           const LayerRun& run = {});

struct VelocityRequest {
    bool capture_attention = false;
    int capture_value_layers = 0;  // capture ValueTensor for this many trailing layers
    const ValueHook* value_hook = nullptr;
};

struct VelocityResult {
    LatentGrid velocity;
    Capture capture;
};

/// Full forward pass: patch-embed the latent grid (one token per cell), add
/// the projected timestep features to every token, run all layers, project
/// the visual stream back to the latent channels.
VelocityResult velocity(const Model& model, const LatentGrid& z, const Matrix& text_tokens,
                        const std::vector<WordSpan>& spans, double t,
                        const VelocityRequest& request = {});

/// v_uncond + scale * (v_cond - v_uncond)
LatentGrid cfg_combine(const LatentGrid& v_cond, const LatentGrid& v_uncond, double scale);

}  // namespace dcedit
