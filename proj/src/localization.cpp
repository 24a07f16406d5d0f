#include "dcedit/localization.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dcedit/error.hpp"

namespace dcedit {

namespace {

void require_consistent(const std::vector<JointAttentionRecord>& records) {
    if (records.empty()) {
        throw Error(ErrorCode::InvalidArgument, "no attention records to fuse");
    }
    const auto& first = records.front().layout;
    for (const auto& r : records) {
        if (r.layout.n_text != first.n_text || r.layout.n_visual != first.n_visual) {
            throw Error(ErrorCode::InvalidArgument, "attention record layout mismatch");
        }
        const auto total = static_cast<std::size_t>(first.n_text + first.n_visual);
        if (r.matrix.rows() != total || r.matrix.cols() != total) {
            throw Error(ErrorCode::InvalidArgument, "attention record shape does not match layout");
        }
    }
}

}  // namespace

Selection make_selection(std::vector<std::size_t> indices, std::size_t n_text) {
    if (indices.empty()) {
        throw Error(ErrorCode::InvalidArgument, "empty token selection");
    }
    std::sort(indices.begin(), indices.end());
    indices.erase(std::unique(indices.begin(), indices.end()), indices.end());
    if (indices.back() >= n_text) {
        throw Error(ErrorCode::InvalidArgument,
                    "selection index " + std::to_string(indices.back()) + " outside [0," +
                        std::to_string(n_text) + ")");
    }
    return Selection{std::move(indices)};
}

namespace {

// Per-entry means are accumulated in sorted value order, which makes fusion
// exactly invariant to the order records arrive in (and to any parallel
// capture schedule upstream).
Matrix mean_block(const std::vector<JointAttentionRecord>& records, std::size_t row_off,
                  std::size_t col_off, std::size_t rows, std::size_t cols) {
    Matrix out(rows, cols);
    std::vector<double> buf(records.size());
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
            for (std::size_t r = 0; r < records.size(); ++r) {
                buf[r] = records[r].matrix(row_off + i, col_off + j);
            }
            std::sort(buf.begin(), buf.end());
            double acc = 0.0;
            for (double v : buf) acc += v;
            out(i, j) = acc / static_cast<double>(records.size());
        }
    }
    return out;
}

}  // namespace

Matrix fuse_cross(const std::vector<JointAttentionRecord>& records) {
    require_consistent(records);
    const auto n = static_cast<std::size_t>(records.front().layout.n_text);
    const auto m = static_cast<std::size_t>(records.front().layout.n_visual);
    return mean_block(records, n, 0, m, n);
}

Matrix fuse_self(const std::vector<JointAttentionRecord>& records, SelfAttention which) {
    require_consistent(records);
    const auto n = static_cast<std::size_t>(records.front().layout.n_text);
    const auto m = static_cast<std::size_t>(records.front().layout.n_visual);
    const std::size_t size = which == SelfAttention::Visual ? m : n;
    const std::size_t offset = which == SelfAttention::Visual ? n : 0;

    Matrix fused = mean_block(records, offset, offset, size, size);
    for (std::size_t i = 0; i < size; ++i) {
        double row_sum = 0.0;
        for (std::size_t j = 0; j < size; ++j) row_sum += fused(i, j);
        if (row_sum == 0.0) {
            throw Error(ErrorCode::Numeric, "degenerate self-attention row");
        }
        for (std::size_t j = 0; j < size; ++j) fused(i, j) /= row_sum;
    }
    return fused;
}

FusedMaps fuse_records(const std::vector<JointAttentionRecord>& records) {
    require_consistent(records);
    FusedMaps maps;
    maps.cross = fuse_cross(records);
    maps.visual_affinity = fuse_self(records, SelfAttention::Visual);
    maps.textual = fuse_self(records, SelfAttention::Textual);
    maps.grid_h = records.front().layout.grid_h;
    maps.grid_w = records.front().layout.grid_w;
    return maps;
}

Vector select_and_aggregate(const Matrix& m, const Selection& selection) {
    if (selection.token_indices.empty()) {
        throw Error(ErrorCode::InvalidArgument, "empty token selection");
    }
    for (std::size_t j : selection.token_indices) {
        if (j >= m.cols()) {
            throw Error(ErrorCode::InvalidArgument, "selection index outside the token range");
        }
    }
    Vector out(m.rows(), 0.0);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        double acc = 0.0;
        for (std::size_t j : selection.token_indices) acc += m(i, j);
        out[i] = acc / static_cast<double>(selection.token_indices.size());
    }
    return out;
}

RefinedMap refine(const FusedMaps& fused, const Selection& selection, double epsilon) {
    if (fused.cross.cols() != fused.textual.rows() ||
        fused.cross.rows() != fused.visual_affinity.rows() ||
        fused.visual_affinity.rows() != fused.visual_affinity.cols()) {
        throw Error(ErrorCode::InvalidArgument, "fused map dimension mismatch");
    }
    Matrix disentangled = matmul(fused.cross, ridge_inverse(fused.textual, epsilon));
    Vector selected = select_and_aggregate(disentangled, selection);
    Vector propagated = matvec(fused.visual_affinity, selected);
    RefinedMap map;
    map.values = minmax_normalize(propagated);
    map.grid_h = fused.grid_h;
    map.grid_w = fused.grid_w;
    return map;
}

RefinedMap localize(const Model& model, const LatentState& z0, const Matrix& text_tokens,
                    const std::vector<WordSpan>& spans, const Selection& selection,
                    const LocalizeOptions& options) {
    if (options.capture_steps.empty()) {
        throw Error(ErrorCode::InvalidArgument, "no capture steps requested");
    }
    int max_step = *std::max_element(options.capture_steps.begin(), options.capture_steps.end());
    int min_step = *std::min_element(options.capture_steps.begin(), options.capture_steps.end());
    if (min_step < 0) {
        throw Error(ErrorCode::InvalidArgument, "negative capture step");
    }
    const std::vector<double>* times = options.schedule_times;
    if (max_step > 0) {
        if (times == nullptr || static_cast<int>(times->size()) <= max_step + 1) {
            throw Error(ErrorCode::InvalidArgument,
                        "capture steps beyond the first require a schedule");
        }
    }

    std::vector<JointAttentionRecord> records;
    LatentGrid z = z0.grid;
    for (int step = 0; step <= max_step; ++step) {
        double t = times ? (*times)[static_cast<std::size_t>(step)] : 0.0;
        bool wanted = std::find(options.capture_steps.begin(), options.capture_steps.end(), step) !=
                      options.capture_steps.end();
        VelocityRequest req;
        req.capture_attention = wanted;
        VelocityResult res = velocity(model, z, text_tokens, spans, t, req);
        for (auto& r : res.capture.records) records.push_back(std::move(r));
        if (step < max_step) {
            double dt = (*times)[static_cast<std::size_t>(step + 1)] - t;
            z = add_scaled(z, dt, res.velocity);
        }
    }
    return refine(fuse_records(records), selection, options.epsilon);
}

}  // namespace dcedit
