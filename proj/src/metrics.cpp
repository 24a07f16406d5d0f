#include "dcedit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "dcedit/error.hpp"

namespace dcedit {

namespace {

void require_same_dims(int aw, int ah, int bw, int bh, const char* what) {
    if (aw != bw || ah != bh) {
        throw Error(ErrorCode::InvalidArgument, std::string(what) + " dimension mismatch");
    }
}

void warn_if_degenerate(const GroundTruthMask& gt) {
    bool any_one = false, any_zero = false;
    for (auto b : gt.bits) (b ? any_one : any_zero) = true;
    if (!any_one || !any_zero) {
        std::fprintf(stderr, "warning: ground-truth mask is constant; IoU is uninformative\n");
    }
}

}  // namespace

GrayImage::GrayImage(int width_, int height_, double fill)
    : width(width_), height(height_),
      pixels(static_cast<std::size_t>(width_) * height_, fill) {
    if (width_ < 1 || height_ < 1) {
        throw Error(ErrorCode::InvalidArgument, "image dimensions must be positive");
    }
}

GroundTruthMask::GroundTruthMask(int width_, int height_, std::uint8_t fill)
    : width(width_), height(height_),
      bits(static_cast<std::size_t>(width_) * height_, fill) {
    if (width_ < 1 || height_ < 1) {
        throw Error(ErrorCode::InvalidArgument, "mask dimensions must be positive");
    }
}

GroundTruthMask complement(const GroundTruthMask& mask) {
    GroundTruthMask out = mask;
    for (auto& b : out.bits) b = b ? 0 : 1;
    return out;
}

double map_mse(const RefinedMap& map, const GroundTruthMask& gt) {
    require_same_dims(map.grid_w, map.grid_h, gt.width, gt.height, "map/mask");
    double acc = 0.0;
    for (std::size_t i = 0; i < map.values.size(); ++i) {
        double d = map.values[i] - static_cast<double>(gt.bits[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(map.values.size());
}

double map_iou(const RefinedMap& map, const GroundTruthMask& gt, double lambda) {
    require_same_dims(map.grid_w, map.grid_h, gt.width, gt.height, "map/mask");
    warn_if_degenerate(gt);
    BinaryMask pred = binarize_map(map, lambda);
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < pred.bits.size(); ++i) {
        bool p = pred.bits[i] != 0, g = gt.bits[i] != 0;
        inter += (p && g) ? 1 : 0;
        uni += (p || g) ? 1 : 0;
    }
    if (uni == 0) return 1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

double masked_mse(const GrayImage& a, const GrayImage& b, const GroundTruthMask& region) {
    require_same_dims(a.width, a.height, b.width, b.height, "image");
    require_same_dims(a.width, a.height, region.width, region.height, "image/region");
    double acc = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < region.bits.size(); ++i) {
        if (!region.bits[i]) continue;
        double d = a.pixels[i] - b.pixels[i];
        acc += d * d;
        ++count;
    }
    if (count == 0) {
        throw Error(ErrorCode::InvalidArgument, "empty evaluation region");
    }
    return acc / static_cast<double>(count);
}

double psnr(const GrayImage& a, const GrayImage& b, const GroundTruthMask& region) {
    double mse = masked_mse(a, b, region);
    if (mse <= 0.0) return 100.0;
    return std::min(100.0, 10.0 * std::log10(1.0 / mse));
}

namespace {

constexpr int kSsimWindow = 11;
constexpr int kSsimHalf = kSsimWindow / 2;
constexpr double kSsimC1 = 0.01 * 0.01;
constexpr double kSsimC2 = 0.03 * 0.03;

const double* ssim_kernel() {
    static const std::vector<double> kernel = [] {
        std::vector<double> k(kSsimWindow * kSsimWindow);
        const double sigma = 1.5;
        double sum = 0.0;
        for (int dy = -kSsimHalf; dy <= kSsimHalf; ++dy) {
            for (int dx = -kSsimHalf; dx <= kSsimHalf; ++dx) {
                double v = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
                k[static_cast<std::size_t>((dy + kSsimHalf) * kSsimWindow + dx + kSsimHalf)] = v;
                sum += v;
            }
        }
        for (double& v : k) v /= sum;
        return k;
    }();
    return kernel.data();
}

}  // namespace

double ssim(const GrayImage& a, const GrayImage& b, const GroundTruthMask& region) {
    require_same_dims(a.width, a.height, b.width, b.height, "image");
    require_same_dims(a.width, a.height, region.width, region.height, "image/region");
    if (a.width < kSsimWindow || a.height < kSsimWindow) {
        throw Error(ErrorCode::InvalidArgument, "image smaller than the SSIM window");
    }
    const double* kernel = ssim_kernel();
    double acc = 0.0;
    std::size_t count = 0;
    for (int cy = kSsimHalf; cy < a.height - kSsimHalf; ++cy) {
        for (int cx = kSsimHalf; cx < a.width - kSsimHalf; ++cx) {
            if (!region.bits[static_cast<std::size_t>(cy) * a.width + cx]) continue;
            double mu_a = 0.0, mu_b = 0.0, aa = 0.0, bb = 0.0, ab = 0.0;
            for (int dy = -kSsimHalf; dy <= kSsimHalf; ++dy) {
                for (int dx = -kSsimHalf; dx <= kSsimHalf; ++dx) {
                    double w = kernel[(dy + kSsimHalf) * kSsimWindow + dx + kSsimHalf];
                    double pa = a.pixels[static_cast<std::size_t>(cy + dy) * a.width + cx + dx];
                    double pb = b.pixels[static_cast<std::size_t>(cy + dy) * a.width + cx + dx];
                    mu_a += w * pa;
                    mu_b += w * pb;
                    aa += w * pa * pa;
                    bb += w * pb * pb;
                    ab += w * pa * pb;
                }
            }
            double var_a = aa - mu_a * mu_a;
            double var_b = bb - mu_b * mu_b;
            double cov = ab - mu_a * mu_b;
            double index = ((2.0 * mu_a * mu_b + kSsimC1) * (2.0 * cov + kSsimC2)) /
                           ((mu_a * mu_a + mu_b * mu_b + kSsimC1) * (var_a + var_b + kSsimC2));
            acc += index;
            ++count;
        }
    }
    if (count == 0) {
        throw Error(ErrorCode::InvalidArgument, "empty evaluation region");
    }
    return acc / static_cast<double>(count);
}

GroundTruthMask resample_mask(const GroundTruthMask& gt, int target_h, int target_w) {
    if (target_h < 1 || target_w < 1) {
        throw Error(ErrorCode::InvalidArgument, "target dimensions must be positive");
    }
    if (target_h == gt.height && target_w == gt.width) return gt;
    GroundTruthMask out(target_w, target_h);
    for (int i = 0; i < target_h; ++i) {
        // Integer footprint partition; upsampling degenerates to nearest pixel.
        int y0 = i * gt.height / target_h;
        int y1 = std::max((i + 1) * gt.height / target_h, y0 + 1);
        for (int j = 0; j < target_w; ++j) {
            int x0 = j * gt.width / target_w;
            int x1 = std::max((j + 1) * gt.width / target_w, x0 + 1);
            int ones = 0, total = 0;
            for (int y = y0; y < y1; ++y) {
                for (int x = x0; x < x1; ++x) {
                    ones += gt.bits[static_cast<std::size_t>(y) * gt.width + x] ? 1 : 0;
                    ++total;
                }
            }
            out.bits[static_cast<std::size_t>(i) * target_w + j] = (2 * ones >= total) ? 1 : 0;
        }
    }
    return out;
}

}  // namespace dcedit
