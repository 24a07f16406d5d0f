#pragma once

#include <cstdint>
#include <vector>

#include "dcedit/editing.hpp"
#include "dcedit/localization.hpp"

namespace dcedit {

/// Single-channel image with pixels in [0,1], row-major.
struct GrayImage {
    int width = 0;
    int height = 0;
    std::vector<double> pixels;

    GrayImage() = default;
    GrayImage(int width_, int height_, double fill = 0.0);
};

/// {0,1} per pixel. Degenerate masks (all ones / all zeros) are legal but
/// make IoU uninformative; consumers warn rather than reject.
struct GroundTruthMask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> bits;

    GroundTruthMask() = default;
    GroundTruthMask(int width_, int height_, std::uint8_t fill = 0);
};

GroundTruthMask complement(const GroundTruthMask& mask);

/// Mean of (map - gt)^2 over cells; grids must already match.
double map_mse(const RefinedMap& map, const GroundTruthMask& gt);

/// IoU between binarize_map(map, lambda) and gt; 1 when both are empty.
double map_iou(const RefinedMap& map, const GroundTruthMask& gt, double lambda);

/// Mean squared pixel difference over cells where region bit = 1.
double masked_mse(const GrayImage& a, const GrayImage& b, const GroundTruthMask& region);

/// 10*log10(1/masked_mse) in dB, capped at 100 (the cap is what identical
/// images report).
double psnr(const GrayImage& a, const GrayImage& b, const GroundTruthMask& region);

/// Standard structural similarity: Gaussian window 11x11 sigma 1.5,
/// C1=0.01^2, C2=0.03^2 on the [0,1] range, averaged over the fully supported
/// windows whose center lies in the region.
double ssim(const GrayImage& a, const GrayImage& b, const GroundTruthMask& region);

/// Nearest-neighbor resampling by majority vote over each target cell's
/// source footprint; ties count as 1.
GroundTruthMask resample_mask(const GroundTruthMask& gt, int target_h, int target_w);

}  // namespace dcedit
