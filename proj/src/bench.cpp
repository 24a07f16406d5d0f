#include "dcedit/bench.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "dcedit/error.hpp"
#include "dcedit/png_io.hpp"

namespace dcedit {

namespace {

struct EditTypeName {
    EditType type;
    const char* name;
};

constexpr EditTypeName kEditTypes[] = {
    {EditType::ChangeObject, "change-object"},
    {EditType::AddObject, "add-object"},
    {EditType::DeleteObject, "delete-object"},
    {EditType::ChangeContent, "change-content"},
    {EditType::ChangePose, "change-pose"},
    {EditType::ChangeColor, "change-color"},
    {EditType::ChangeMaterials, "change-materials"},
    {EditType::ChangeBackground, "change-background"},
    {EditType::ChangeStyle, "change-style"},
    {EditType::ChangeText, "change-text"},
};

bool mask_optional_for(EditType type) {
    return type == EditType::ChangeStyle || type == EditType::DeleteObject;
}

/// First contiguous occurrence of `needle` in `haystack`, word for word.
std::optional<std::size_t> find_span(const std::vector<std::string>& haystack,
                                     const std::vector<std::string>& needle) {
    if (needle.empty() || needle.size() > haystack.size()) return std::nullopt;
    for (std::size_t start = 0; start + needle.size() <= haystack.size(); ++start) {
        if (std::equal(needle.begin(), needle.end(), haystack.begin() + static_cast<long>(start))) {
            return start;
        }
    }
    return std::nullopt;
}

}  // namespace

const char* edit_type_name(EditType type) {
    for (const auto& e : kEditTypes) {
        if (e.type == type) return e.name;
    }
    return "unknown";
}

std::optional<EditType> parse_edit_type(const std::string& name) {
    for (const auto& e : kEditTypes) {
        if (name == e.name) return e.type;
    }
    return std::nullopt;
}

const BenchmarkItem* Manifest::find(const std::string& id) const {
    for (const auto& item : items) {
        if (item.id == id) return &item;
    }
    return nullptr;
}

std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> words;
    std::istringstream in(text);
    std::string w;
    while (in >> w) words.push_back(w);
    return words;
}

Manifest load_manifest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorCode::Io, "cannot open manifest '" + path + "'");
    }
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::InvalidArgument, "malformed manifest JSON: " + std::string(e.what()));
    }

    Manifest manifest;
    try {
        manifest.version = doc.at("version").get<int>();
        if (manifest.version != 1) {
            throw Error(ErrorCode::InvalidArgument,
                        "unsupported manifest version " + std::to_string(manifest.version));
        }
        std::set<std::string> ids;
        for (const auto& entry : doc.at("items")) {
            BenchmarkItem item;
            item.id = entry.at("id").get<std::string>();
            if (!ids.insert(item.id).second) {
                throw Error(ErrorCode::InvalidArgument, "duplicate id '" + item.id + "'");
            }
            item.image_ref = entry.at("image").get<std::string>();
            item.source_prompt = split_words(entry.at("source_prompt").get<std::string>());
            item.target_prompt = split_words(entry.at("target_prompt").get<std::string>());
            if (item.source_prompt.empty() || item.target_prompt.empty()) {
                throw Error(ErrorCode::InvalidArgument, "item '" + item.id + "': empty prompt");
            }

            auto read_optional = [&](const char* key) -> std::optional<std::string> {
                if (!entry.contains(key) || entry.at(key).is_null()) return std::nullopt;
                std::string value = entry.at(key).get<std::string>();
                if (value.empty()) return std::nullopt;
                return value;
            };
            item.blend_source = read_optional("blend_source");
            item.blend_target = read_optional("blend_target");
            item.mask_ref = read_optional("mask");

            std::string type_name = entry.at("edit_type").get<std::string>();
            auto type = parse_edit_type(type_name);
            if (!type) {
                throw Error(ErrorCode::InvalidArgument,
                            "item '" + item.id + "': unknown edit type '" + type_name + "'");
            }
            item.edit_type = *type;

            if (!item.mask_ref && !mask_optional_for(item.edit_type)) {
                throw Error(ErrorCode::InvalidArgument,
                            "item '" + item.id + "': mask required for edit type '" + type_name + "'");
            }
            if (item.blend_source &&
                !find_span(item.source_prompt, split_words(*item.blend_source))) {
                throw Error(ErrorCode::InvalidArgument,
                            "item '" + item.id + "': blend words not in the source prompt");
            }
            if (item.blend_target &&
                !find_span(item.target_prompt, split_words(*item.blend_target))) {
                throw Error(ErrorCode::InvalidArgument,
                            "item '" + item.id + "': blend words not in the target prompt");
            }
            manifest.items.push_back(std::move(item));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::InvalidArgument, "manifest schema violation: " + std::string(e.what()));
    }
    return manifest;
}

PromptDiff diff_prompts(const std::vector<std::string>& source,
                        const std::vector<std::string>& target) {
    const std::size_t m = source.size(), n = target.size();
    if (m == 0 || n == 0) {
        throw Error(ErrorCode::InvalidArgument, "diff of an empty prompt");
    }

    // Longest common subsequence table, then a backtrack from the end that
    // greedily takes matches and prefers climbing the source side on ties.
    std::vector<std::vector<int>> lcs(m + 1, std::vector<int>(n + 1, 0));
    for (std::size_t i = 1; i <= m; ++i) {
        for (std::size_t j = 1; j <= n; ++j) {
            lcs[i][j] = source[i - 1] == target[j - 1]
                            ? lcs[i - 1][j - 1] + 1
                            : std::max(lcs[i - 1][j], lcs[i][j - 1]);
        }
    }
    std::vector<std::pair<std::size_t, std::size_t>> matched;
    {
        std::size_t i = m, j = n;
        while (i > 0 && j > 0) {
            if (source[i - 1] == target[j - 1]) {
                matched.emplace_back(i - 1, j - 1);
                --i, --j;
            } else if (lcs[i - 1][j] >= lcs[i][j - 1]) {
                --i;
            } else {
                --j;
            }
        }
        std::reverse(matched.begin(), matched.end());
    }

    std::vector<bool> source_matched(m, false), target_matched(n, false);
    for (auto [si, tj] : matched) {
        source_matched[si] = true;
        target_matched[tj] = true;
    }

    PromptDiff diff;
    bool any_source = false, any_target = false;
    std::size_t s_lo = 0, s_hi = 0, t_lo = 0, t_hi = 0;
    for (std::size_t i = 0; i < m; ++i) {
        if (source_matched[i]) continue;
        if (!any_source) s_lo = i;
        s_hi = i + 1;
        any_source = true;
    }
    for (std::size_t j = 0; j < n; ++j) {
        if (target_matched[j]) continue;
        if (!any_target) t_lo = j;
        t_hi = j + 1;
        any_target = true;
    }

    if (!any_source && !any_target) {
        return PromptDiff{m, m, n, n};  // identical prompts
    }
    if (any_source) {
        diff.source_begin = s_lo;
        diff.source_end = s_hi;
    }
    if (any_target) {
        diff.target_begin = t_lo;
        diff.target_end = t_hi;
    }
    if (!any_source) {
        // Pure insertion: anchor at the source position following the last
        // matched pair that precedes the inserted block.
        std::size_t anchor = 0;
        for (auto [si, tj] : matched) {
            if (tj < t_lo) anchor = si + 1;
        }
        diff.source_begin = diff.source_end = anchor;
    }
    if (!any_target) {
        std::size_t anchor = 0;
        for (auto [si, tj] : matched) {
            if (si < s_lo) anchor = tj + 1;
        }
        diff.target_begin = diff.target_end = anchor;
    }

    auto flanks_agree = [&](const PromptDiff& d) {
        if (d.source_begin != d.target_begin) return false;
        if (m - d.source_end != n - d.target_end) return false;
        for (std::size_t i = 0; i < d.source_begin; ++i) {
            if (source[i] != target[i]) return false;
        }
        for (std::size_t i = d.source_end, j = d.target_end; i < m; ++i, ++j) {
            if (source[i] != target[j]) return false;
        }
        return true;
    };
    if (flanks_agree(diff)) return diff;

    // Non-contiguous alignment (e.g. swapped words): fall back to trimming the
    // common prefix and suffix, which round-trips by construction.
    std::size_t prefix = 0;
    while (prefix < m && prefix < n && source[prefix] == target[prefix]) ++prefix;
    std::size_t suffix = 0;
    while (suffix < m - prefix && suffix < n - prefix &&
           source[m - 1 - suffix] == target[n - 1 - suffix]) {
        ++suffix;
    }
    return PromptDiff{prefix, m - suffix, prefix, n - suffix};
}

std::vector<std::string> apply_diff(const std::vector<std::string>& source,
                                    const std::vector<std::string>& target,
                                    const PromptDiff& diff) {
    std::vector<std::string> out;
    out.insert(out.end(), source.begin(), source.begin() + static_cast<long>(diff.source_begin));
    out.insert(out.end(), target.begin() + static_cast<long>(diff.target_begin),
               target.begin() + static_cast<long>(diff.target_end));
    out.insert(out.end(), source.begin() + static_cast<long>(diff.source_end), source.end());
    return out;
}

GroundTruthMask load_mask(const std::string& path) {
    Gray8Image image = read_gray8_png(path);
    GroundTruthMask mask(image.width, image.height);
    for (std::size_t i = 0; i < image.pixels.size(); ++i) {
        mask.bits[i] = image.pixels[i] >= 128 ? 1 : 0;
    }
    return mask;
}

void save_mask(const GroundTruthMask& mask, const std::string& path) {
    Gray8Image image;
    image.width = mask.width;
    image.height = mask.height;
    image.pixels.resize(mask.bits.size());
    for (std::size_t i = 0; i < mask.bits.size(); ++i) {
        image.pixels[i] = mask.bits[i] ? 255 : 0;
    }
    write_gray8_png(path, image);
}

}  // namespace dcedit
