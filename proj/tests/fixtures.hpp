#pragma once

// Shared fixtures for harness-level tests: a scratch directory and a small
// synthetic benchmark manifest with PNG masks.

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "dcedit/bench.hpp"

namespace fixtures {

struct TempDir {
    std::filesystem::path path;

    explicit TempDir(const std::string& tag) {
        path = std::filesystem::temp_directory_path() /
               ("dcedit_" + tag + "_" + std::to_string(::getpid()));
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
};

/// Items "item0".."item<n-1>": synthetic seed images, a one-word blend span,
/// and a rectangular editing mask at 48x48 pixels. Returns the manifest path.
inline std::string write_manifest(const std::filesystem::path& dir, int items) {
    static const char* kColors[] = {"red", "green", "yellow", "black", "white"};
    static const char* kTargets[] = {"blue", "pink", "purple", "orange", "gray"};

    nlohmann::json manifest;
    manifest["version"] = 1;
    manifest["items"] = nlohmann::json::array();
    for (int i = 0; i < items; ++i) {
        const std::string id = "item" + std::to_string(i);
        const std::string source_color = kColors[i % 5];
        const std::string target_color = kTargets[i % 5];

        dcedit::GroundTruthMask mask(48, 48, 0);
        int x0 = 4 * (i % 3), y0 = 4 * (i % 2);
        for (int y = y0; y < y0 + 16; ++y)
            for (int x = x0; x < x0 + 16; ++x) mask.bits[static_cast<std::size_t>(y) * 48 + x] = 1;
        const std::string mask_name = id + ".mask.png";
        dcedit::save_mask(mask, (dir / mask_name).string());

        manifest["items"].push_back({
            {"id", id},
            {"image", "seed:" + std::to_string(1000 + i)},
            {"source_prompt", "a " + source_color + " bird on a branch"},
            {"target_prompt", "a " + target_color + " bird on a branch"},
            {"blend_source", source_color},
            {"blend_target", target_color},
            {"mask", mask_name},
            {"edit_type", "change-color"},
        });
    }
    const std::string path = (dir / "manifest.json").string();
    std::ofstream out(path);
    out << manifest.dump(2);
    return path;
}

}  // namespace fixtures
