#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dcedit {

struct Gray8Image {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;
};

/// Reads an 8-bit grayscale PNG; anything else (color, 16-bit, palette,
/// alpha) is rejected.
Gray8Image read_gray8_png(const std::string& path);

/// Writes an 8-bit grayscale PNG atomically (temp file + rename).
void write_gray8_png(const std::string& path, const Gray8Image& image);

}  // namespace dcedit
