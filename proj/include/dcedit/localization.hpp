#pragma once

#include <cstddef>
#include <vector>

#include "dcedit/model.hpp"
#include "dcedit/numeric.hpp"

namespace dcedit {

/// Attention maps fused over all layers and heads: the visual->text cross
/// block, plus the row-stochastic visual and textual self-affinity blocks.
struct FusedMaps {
    Matrix cross;            // M x N
    Matrix visual_affinity;  // M x M, rows sum to 1
    Matrix textual;          // N x N, rows sum to 1
    int grid_h = 0;
    int grid_w = 0;
};

/// Per-visual-token localization score in [0,1]. Unless the pre-normalization
/// map was flat, at least one entry is exactly 0 and one exactly 1.
struct RefinedMap {
    Vector values;  // length grid_h * grid_w
    int grid_h = 0;
    int grid_w = 0;
};

/// Token indices of the word span whose semantics are being localized.
/// Non-empty, sorted, unique, all within [0, N).
struct Selection {
    std::vector<std::size_t> token_indices;
};

Selection make_selection(std::vector<std::size_t> indices, std::size_t n_text);

/// Element-wise mean of the visual->text quadrant over all records.
Matrix fuse_cross(const std::vector<JointAttentionRecord>& records);

enum class SelfAttention { Visual, Textual };

/// Mean of the chosen self-attention quadrant over all records, then each row
/// rescaled to sum 1.
Matrix fuse_self(const std::vector<JointAttentionRecord>& records, SelfAttention which);

FusedMaps fuse_records(const std::vector<JointAttentionRecord>& records);

/// Mean of the selected columns of m (multi-token spans aggregate by mean,
/// which commutes with the affinity product).
Vector select_and_aggregate(const Matrix& m, const Selection& selection);

/// The map refinement: cross * (textual + eps*I)^{-1}, column selection,
/// visual-affinity product, min-max normalization. Negative intermediates are
/// deliberately not clamped before normalization.
RefinedMap refine(const FusedMaps& fused, const Selection& selection, double epsilon);

struct LocalizeOptions {
    double epsilon = 1e-6;
    /// Which inversion steps to capture attention at; {0} = the first step
    /// only. Steps beyond 0 require a schedule and advance the latent with the
    /// conditional velocity. Records from all captured steps are pooled into
    /// one mean.
    std::vector<int> capture_steps = {0};
    const std::vector<double>* schedule_times = nullptr;
};

/// Runs capture forward passes on the source prompt, fuses every captured
/// record, and refines. Side-effect free on the model.
RefinedMap localize(const Model& model, const LatentState& z0, const Matrix& text_tokens,
                    const std::vector<WordSpan>& spans, const Selection& selection,
                    const LocalizeOptions& options = {});

}  // namespace dcedit
