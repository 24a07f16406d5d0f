#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dcedit/metrics.hpp"

namespace dcedit {

enum class EditType {
    ChangeObject,
    AddObject,
    DeleteObject,
    ChangeContent,
    ChangePose,
    ChangeColor,
    ChangeMaterials,
    ChangeBackground,
    ChangeStyle,
    ChangeText,
};

const char* edit_type_name(EditType type);
std::optional<EditType> parse_edit_type(const std::string& name);

struct BenchmarkItem {
    std::string id;
    std::string image_ref;  // "seed:<n>" or a path to a latent tensor file
    std::vector<std::string> source_prompt;
    std::vector<std::string> target_prompt;
    std::optional<std::string> blend_source;  // annotated blending words, override the diff
    std::optional<std::string> blend_target;
    std::optional<std::string> mask_ref;
    EditType edit_type = EditType::ChangeObject;
};

struct Manifest {
    int version = 1;
    std::vector<BenchmarkItem> items;

    const BenchmarkItem* find(const std::string& id) const;
};

/// Parses and validates the manifest JSON: unique ids, the closed edit-type
/// enum, blend words present in their prompts, masks required for every type
/// except change-style and delete-object.
Manifest load_manifest(const std::string& path);

/// Word-level diff between two prompts, as half-open spans into each word
/// list. Both spans empty means the prompts are identical; an empty span on
/// one side with spans on the other is a pure insertion or deletion.
struct PromptDiff {
    std::size_t source_begin = 0, source_end = 0;
    std::size_t target_begin = 0, target_end = 0;

    bool empty() const noexcept {
        return source_begin == source_end && target_begin == target_end;
    }
};

/// LCS alignment at word level; the returned spans cover the unmatched words
/// on each side and always satisfy apply_diff(ps, pt, diff) == pt.
PromptDiff diff_prompts(const std::vector<std::string>& source,
                        const std::vector<std::string>& target);

/// Replaces the source span with the target span's words.
std::vector<std::string> apply_diff(const std::vector<std::string>& source,
                                    const std::vector<std::string>& target,
                                    const PromptDiff& diff);

std::vector<std::string> split_words(const std::string& text);

/// 8-bit grayscale PNG -> mask; pixel >= 128 reads as 1.
GroundTruthMask load_mask(const std::string& path);
void save_mask(const GroundTruthMask& mask, const std::string& path);

}  // namespace dcedit
