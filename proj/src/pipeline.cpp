#include "dcedit/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "dcedit/error.hpp"
#include "dcedit/metrics.hpp"
#include "dcedit/png_io.hpp"
#include "dcedit/rng.hpp"
#include "dcedit/tensor_io.hpp"

namespace fs = std::filesystem;

namespace dcedit {

namespace {

constexpr std::uint64_t kSyntheticLatentSalt = 0x6C6174656E74ULL;  // "latent"

std::string join_path(const std::string& dir, const std::string& name) {
    return (fs::path(dir) / name).string();
}

std::string resolve_ref(const std::string& ref, const std::string& base_dir) {
    fs::path p(ref);
    if (p.is_absolute() || base_dir.empty()) return ref;
    return (fs::path(base_dir) / p).string();
}

void read_int(const nlohmann::json& doc, const char* key, int& out) {
    if (doc.contains(key)) out = doc.at(key).get<int>();
}

void read_double(const nlohmann::json& doc, const char* key, double& out) {
    if (doc.contains(key)) out = doc.at(key).get<double>();
}

Tensor grid_tensor(const LatentGrid& grid) {
    Tensor t;
    t.dims = {static_cast<std::uint64_t>(grid.h), static_cast<std::uint64_t>(grid.w),
              static_cast<std::uint64_t>(grid.c)};
    t.values = grid.data;
    return t;
}

LatentGrid tensor_grid(const Tensor& t, const std::string& what) {
    if (t.dims.size() != 3) {
        throw Error(ErrorCode::Io, what + " is not an h*w*c latent tensor");
    }
    LatentGrid grid(static_cast<int>(t.dims[0]), static_cast<int>(t.dims[1]),
                    static_cast<int>(t.dims[2]));
    grid.data = t.values;
    return grid;
}

nlohmann::json metric_or_null(const std::optional<double>& v) {
    if (!v) return nullptr;
    return *v;
}

}  // namespace

void merge_config_file(RunConfig& config, const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorCode::Io, "cannot open config '" + path + "'");
    }
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::InvalidArgument, "malformed config JSON: " + std::string(e.what()));
    }
    try {
        read_int(doc, "layers", config.model.layers);
        read_int(doc, "heads", config.model.heads);
        read_int(doc, "model_dim", config.model.model_dim);
        read_int(doc, "text_dim", config.model.text_dim);
        read_int(doc, "visual_dim", config.model.visual_dim);
        if (doc.contains("seed")) config.model.seed = doc.at("seed").get<std::uint64_t>();
        read_int(doc, "steps", config.control.steps);
        read_double(doc, "cfg", config.control.cfg_scale);
        read_int(doc, "feature_steps", config.control.feature_steps);
        read_int(doc, "latent_steps", config.control.latent_steps);
        read_int(doc, "r_layers", config.control.r_layers);
        read_double(doc, "lambda", config.control.lambda);
        read_double(doc, "epsilon", config.epsilon);
        read_int(doc, "grid_h", config.grid_h);
        read_int(doc, "grid_w", config.grid_w);
        read_int(doc, "grid_c", config.grid_c);
        if (doc.contains("manifest")) config.manifest_path = doc.at("manifest").get<std::string>();
        if (doc.contains("out")) config.output_dir = doc.at("out").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::InvalidArgument, "config schema violation: " + std::string(e.what()));
    }
}

void apply_env_seed_override(RunConfig& config) {
    const char* env = std::getenv("DCEDIT_SEED");
    if (!env || !*env) return;
    char* end = nullptr;
    unsigned long long v = std::strtoull(env, &end, 10);
    if (end == env || *end != '\0') {
        throw Error(ErrorCode::InvalidArgument, "DCEDIT_SEED must be an unsigned integer");
    }
    config.model.seed = static_cast<std::uint64_t>(v);
}

LatentGrid load_source_latent(const std::string& image_ref, int h, int w, int c,
                              const std::string& base_dir) {
    if (image_ref.rfind("seed:", 0) == 0) {
        const std::string digits = image_ref.substr(5);
        char* end = nullptr;
        unsigned long long n = std::strtoull(digits.c_str(), &end, 10);
        if (end == digits.c_str() || *end != '\0') {
            throw Error(ErrorCode::InvalidArgument, "bad synthetic image ref '" + image_ref + "'");
        }
        LatentGrid grid(h, w, c);
        SplitMix64 gen(splitmix64_once(static_cast<std::uint64_t>(n) ^ kSyntheticLatentSalt));
        for (double& x : grid.data) x = gen.next_gaussian();
        return grid;
    }
    LatentGrid grid = tensor_grid(read_tensor_file(resolve_ref(image_ref, base_dir)),
                                  "'" + image_ref + "'");
    if (grid.h != h || grid.w != w || grid.c != c) {
        throw Error(ErrorCode::InvalidArgument,
                    "latent '" + image_ref + "' does not match the configured grid");
    }
    return grid;
}

double latent_to_gray(double x) {
    return std::clamp(0.5 + x / 6.0, 0.0, 1.0);
}

GrayImage latent_channel_image(const LatentGrid& grid, int channel) {
    GrayImage img(grid.w, grid.h);
    for (int y = 0; y < grid.h; ++y)
        for (int x = 0; x < grid.w; ++x)
            img.pixels[static_cast<std::size_t>(y) * grid.w + x] =
                latent_to_gray(grid.at(y, x, channel));
    return img;
}

Selection selection_for_item(const BenchmarkItem& item,
                             const std::optional<std::string>& override_spec) {
    const std::size_t n_text = item.source_prompt.size();
    if (override_spec) {
        std::vector<std::size_t> indices;
        std::string entry;
        std::istringstream in(*override_spec);
        while (std::getline(in, entry, ',')) {
            if (entry.empty()) continue;
            bool numeric = std::all_of(entry.begin(), entry.end(),
                                       [](unsigned char ch) { return std::isdigit(ch); });
            if (numeric) {
                indices.push_back(static_cast<std::size_t>(std::stoull(entry)));
                continue;
            }
            bool found = false;
            for (std::size_t i = 0; i < n_text; ++i) {
                if (item.source_prompt[i] == entry) {
                    indices.push_back(i);
                    found = true;
                }
            }
            if (!found) {
                throw Error(ErrorCode::InvalidArgument,
                            "selection word '" + entry + "' not in the source prompt");
            }
        }
        return make_selection(std::move(indices), n_text);
    }
    if (item.blend_source) {
        const auto words = split_words(*item.blend_source);
        for (std::size_t start = 0; start + words.size() <= n_text; ++start) {
            if (std::equal(words.begin(), words.end(),
                           item.source_prompt.begin() + static_cast<long>(start))) {
                std::vector<std::size_t> indices(words.size());
                for (std::size_t i = 0; i < words.size(); ++i) indices[i] = start + i;
                return make_selection(std::move(indices), n_text);
            }
        }
        throw Error(ErrorCode::InvalidArgument,
                    "item '" + item.id + "': blend words not in the source prompt");
    }
    PromptDiff diff = diff_prompts(item.source_prompt, item.target_prompt);
    if (diff.source_begin == diff.source_end) {
        throw Error(ErrorCode::InvalidArgument,
                    "item '" + item.id +
                        "': no source-side blend span; pass a selection override");
    }
    std::vector<std::size_t> indices;
    for (std::size_t i = diff.source_begin; i < diff.source_end; ++i) indices.push_back(i);
    return make_selection(std::move(indices), n_text);
}

void dump_model_weights(const Model& model, const std::string& path) {
    std::vector<NamedTensor> entries;
    auto push = [&entries](const std::string& name, const Matrix& m) {
        Tensor t;
        t.dims = {m.rows(), m.cols()};
        t.values.assign(m.data(), m.data() + m.size());
        entries.push_back({name, std::move(t), TensorDType::F64});
    };
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        const auto& w = model.layers[l];
        const std::string base = "layer/" + std::to_string(l) + "/";
        push(base + "text_query", w.text_query);
        push(base + "text_key", w.text_key);
        push(base + "text_value", w.text_value);
        push(base + "visual_query", w.visual_query);
        push(base + "visual_key", w.visual_key);
        push(base + "visual_value", w.visual_value);
        push(base + "text_out", w.text_out);
        push(base + "visual_out", w.visual_out);
    }
    push("time_text", model.time_text);
    push("time_visual", model.time_visual);
    write_tensor_archive(path, entries);
}

namespace {

Tensor scalar_tensor(std::vector<double> values) {
    Tensor t;
    t.dims = {values.size()};
    t.values = std::move(values);
    return t;
}

}  // namespace

void save_trace(const EditTrace& trace, std::uint64_t model_seed, const std::string& path) {
    const int k = trace.schedule.steps();
    const LatentGrid& g0 = trace.latents.front().grid;
    std::vector<NamedTensor> entries;
    entries.push_back({"meta",
                       scalar_tensor({1.0, static_cast<double>(k), static_cast<double>(trace.r_layers),
                                      static_cast<double>(g0.h), static_cast<double>(g0.w),
                                      static_cast<double>(g0.c),
                                      static_cast<double>(model_seed >> 32),
                                      static_cast<double>(model_seed & 0xFFFFFFFFULL)}),
                       TensorDType::F64});
    entries.push_back({"schedule", scalar_tensor(trace.schedule.times), TensorDType::F64});
    for (int i = 0; i <= k; ++i) {
        entries.push_back({"latent/" + std::to_string(i),
                           grid_tensor(trace.latents[static_cast<std::size_t>(i)].grid),
                           TensorDType::F64});
    }
    for (int i = 0; i < k; ++i) {
        entries.push_back({"velocity/" + std::to_string(i),
                           grid_tensor(trace.velocities[static_cast<std::size_t>(i)]),
                           TensorDType::F64});
        for (const auto& [layer, values] : trace.values[static_cast<std::size_t>(i)].by_layer) {
            Tensor t;
            t.dims = {values.rows(), values.cols()};
            t.values.assign(values.data(), values.data() + values.size());
            entries.push_back({"values/" + std::to_string(i) + "/" + std::to_string(layer),
                               std::move(t), TensorDType::F64});
        }
    }
    write_tensor_archive(path, entries);
}

EditTrace load_trace(const std::string& path, const RunConfig& config) {
    std::map<std::string, Tensor> entries;
    try {
        entries = read_tensor_archive(path);
    } catch (const Error& e) {
        throw Error(ErrorCode::TraceMismatch, "trace mismatch: " + std::string(e.what()));
    }
    auto fetch = [&entries, &path](const std::string& name) -> const Tensor& {
        auto it = entries.find(name);
        if (it == entries.end()) {
            throw Error(ErrorCode::TraceMismatch,
                        "trace mismatch: '" + path + "' is missing entry '" + name + "'");
        }
        return it->second;
    };

    const Tensor& meta = fetch("meta");
    if (meta.values.size() != 8 || meta.values[0] != 1.0) {
        throw Error(ErrorCode::TraceMismatch, "trace mismatch: bad meta entry");
    }
    const int k = static_cast<int>(meta.values[1]);
    const int r = static_cast<int>(meta.values[2]);
    const std::uint64_t seed = (static_cast<std::uint64_t>(meta.values[6]) << 32) |
                               static_cast<std::uint64_t>(meta.values[7]);
    if (k != config.control.steps || r != resolve_r_layers(config.control, config.model.layers) ||
        static_cast<int>(meta.values[3]) != config.grid_h ||
        static_cast<int>(meta.values[4]) != config.grid_w ||
        static_cast<int>(meta.values[5]) != config.grid_c || seed != config.model.seed) {
        throw Error(ErrorCode::TraceMismatch,
                    "trace mismatch: '" + path + "' was produced with a different configuration");
    }

    EditTrace trace;
    trace.r_layers = r;
    trace.schedule.times = fetch("schedule").values;
    if (trace.schedule.steps() != k || trace.schedule.times != make_schedule(k).times) {
        throw Error(ErrorCode::TraceMismatch, "trace mismatch: unexpected schedule");
    }
    for (int i = 0; i <= k; ++i) {
        LatentState state;
        state.grid = tensor_grid(fetch("latent/" + std::to_string(i)), "trace latent");
        state.t = trace.schedule.times[static_cast<std::size_t>(i)];
        trace.latents.push_back(std::move(state));
    }
    for (int i = 0; i < k; ++i) {
        trace.velocities.push_back(
            tensor_grid(fetch("velocity/" + std::to_string(i)), "trace velocity"));
        StepValues sv;
        sv.t = trace.schedule.times[static_cast<std::size_t>(i)];
        const std::string prefix = "values/" + std::to_string(i) + "/";
        for (const auto& [name, tensor] : entries) {
            if (name.rfind(prefix, 0) != 0) continue;
            if (tensor.dims.size() != 2) {
                throw Error(ErrorCode::TraceMismatch, "trace mismatch: bad value tensor");
            }
            int layer = std::stoi(name.substr(prefix.size()));
            Matrix m(tensor.dims[0], tensor.dims[1]);
            std::copy(tensor.values.begin(), tensor.values.end(), m.data());
            sv.by_layer.emplace(layer, std::move(m));
        }
        if (static_cast<int>(sv.by_layer.size()) != r) {
            throw Error(ErrorCode::TraceMismatch, "trace mismatch: stored values incomplete");
        }
        trace.values.push_back(std::move(sv));
    }
    return trace;
}

Pipeline::Pipeline(RunConfig config) : config_(std::move(config)) {
    apply_env_seed_override(config_);
    if (config_.grid_h < 1 || config_.grid_w < 1 || config_.grid_c < 1) {
        throw Error(ErrorCode::InvalidArgument, "grid dimensions must be positive");
    }
    if (!(config_.control.lambda >= 0.0 && config_.control.lambda <= 100.0)) {
        throw Error(ErrorCode::InvalidArgument, "lambda outside [0,100]");
    }
    if (config_.epsilon < 0.0) {
        throw Error(ErrorCode::InvalidArgument, "epsilon must be non-negative");
    }
    if (config_.control.steps < 1) {
        throw Error(ErrorCode::InvalidArgument, "steps must be at least 1");
    }
    if (config_.control.feature_steps > config_.control.steps ||
        config_.control.latent_steps > config_.control.steps ||
        config_.control.feature_steps < 0 || config_.control.latent_steps < 0) {
        throw Error(ErrorCode::InvalidArgument, "control step counts outside [0, steps]");
    }
    resolve_r_layers(config_.control, config_.model.layers);  // validates r <= layers
    model_ = init_model(config_.model);
    if (!config_.manifest_path.empty()) {
        manifest_ = load_manifest(config_.manifest_path);
        manifest_dir_ = fs::path(config_.manifest_path).parent_path().string();
    }
}

const Manifest& Pipeline::manifest() const {
    if (!manifest_) {
        throw Error(ErrorCode::InvalidArgument, "no manifest configured");
    }
    return *manifest_;
}

const BenchmarkItem& Pipeline::require_item(const std::string& item_id) const {
    const BenchmarkItem* item = manifest().find(item_id);
    if (!item) {
        throw Error(ErrorCode::NotFound, "unknown item id '" + item_id + "'");
    }
    return *item;
}

RefinedMap Pipeline::compute_map(const BenchmarkItem& item,
                                 const std::optional<std::string>& selection_override) const {
    LatentGrid z0 = load_source_latent(item.image_ref, config_.grid_h, config_.grid_w,
                                       config_.grid_c, manifest_dir_);
    Matrix tokens = embed_words(item.source_prompt, config_.model);
    Selection selection = selection_for_item(item, selection_override);
    LocalizeOptions options;
    options.epsilon = config_.epsilon;
    return localize(model_, LatentState{std::move(z0), 0.0}, tokens,
                    spans_for_words(item.source_prompt), selection, options);
}

void Pipeline::run_localize(const std::string& item_id,
                            const std::optional<std::string>& selection_override) {
    const BenchmarkItem& item = require_item(item_id);
    RefinedMap map = compute_map(item, selection_override);

    fs::create_directories(config_.output_dir);
    Tensor t;
    t.dims = {static_cast<std::uint64_t>(map.grid_h), static_cast<std::uint64_t>(map.grid_w)};
    t.values = map.values;
    write_tensor_file(join_path(config_.output_dir, item.id + ".map.tnsr"), t, TensorDType::F32);

    Gray8Image png;
    png.width = map.grid_w;
    png.height = map.grid_h;
    png.pixels.resize(map.values.size());
    for (std::size_t i = 0; i < map.values.size(); ++i) {
        png.pixels[i] = static_cast<std::uint8_t>(std::lround(255.0 * map.values[i]));
    }
    write_gray8_png(join_path(config_.output_dir, item.id + ".map.png"), png);
}

EditTrace Pipeline::obtain_trace(const BenchmarkItem& item, const std::string& trace_path) const {
    if (fs::exists(trace_path)) {
        return load_trace(trace_path, config_);
    }
    LatentGrid z0 = load_source_latent(item.image_ref, config_.grid_h, config_.grid_w,
                                       config_.grid_c, manifest_dir_);
    const int r = resolve_r_layers(config_.control, config_.model.layers);
    MmditFlow flow(model_, item.source_prompt, item.target_prompt, r);
    InvertResult inverted = invert(flow, LatentState{std::move(z0), 0.0},
                                   make_schedule(config_.control.steps),
                                   config_.control.cfg_scale, r);
    save_trace(inverted.trace, config_.model.seed, trace_path);
    return std::move(inverted.trace);
}

void Pipeline::run_edit(const std::string& item_id) {
    const BenchmarkItem& item = require_item(item_id);
    fs::create_directories(config_.output_dir);

    RefinedMap map;
    const std::string map_path = join_path(config_.output_dir, item.id + ".map.tnsr");
    if (fs::exists(map_path)) {
        Tensor t = read_tensor_file(map_path);
        if (t.dims.size() != 2 || static_cast<int>(t.dims[0]) != config_.grid_h ||
            static_cast<int>(t.dims[1]) != config_.grid_w) {
            throw Error(ErrorCode::InvalidArgument,
                        "'" + map_path + "' does not match the configured grid");
        }
        map.grid_h = static_cast<int>(t.dims[0]);
        map.grid_w = static_cast<int>(t.dims[1]);
        map.values = std::move(t.values);
    } else {
        map = compute_map(item, std::nullopt);
    }

    EditTrace trace = obtain_trace(item, join_path(config_.output_dir, item.id + ".trace.tnsc"));

    const int r = resolve_r_layers(config_.control, config_.model.layers);
    MmditFlow flow(model_, item.source_prompt, item.target_prompt, r);
    ControlConfig control = config_.control;
    control.r_layers = r;
    LatentState edited = sample_edit(flow, trace, map, control);
    write_tensor_file(join_path(config_.output_dir, item.id + ".edit.tnsr"),
                      grid_tensor(edited.grid), TensorDType::F32);

    LatentState recon = reconstruct_cached(trace);
    write_tensor_file(join_path(config_.output_dir, item.id + ".recon.tnsr"),
                      grid_tensor(recon.grid), TensorDType::F32);
}

std::size_t Pipeline::run_eval(const std::string& results_dir) {
    const std::string dir = results_dir.empty() ? config_.output_dir : results_dir;
    std::string out;
    std::size_t lines = 0;

    for (const auto& item : manifest().items) {
        const std::string map_path = join_path(dir, item.id + ".map.tnsr");
        const std::string edit_path = join_path(dir, item.id + ".edit.tnsr");
        if (!fs::exists(map_path) || !fs::exists(edit_path)) continue;

        RefinedMap map;
        {
            Tensor t = read_tensor_file(map_path);
            if (t.dims.size() != 2) {
                throw Error(ErrorCode::Io, "'" + map_path + "' is not a map tensor");
            }
            map.grid_h = static_cast<int>(t.dims[0]);
            map.grid_w = static_cast<int>(t.dims[1]);
            map.values = std::move(t.values);
        }
        LatentGrid edited = tensor_grid(read_tensor_file(edit_path), "'" + edit_path + "'");
        LatentGrid source = load_source_latent(item.image_ref, edited.h, edited.w, edited.c,
                                               manifest_dir_);

        std::optional<double> v_map_mse, v_map_iou, v_bg_mse, v_psnr, v_ssim;
        GroundTruthMask region(edited.w, edited.h, 1);  // whole grid when no mask
        if (item.mask_ref) {
            GroundTruthMask gt = resample_mask(load_mask(resolve_ref(*item.mask_ref, manifest_dir_)),
                                               map.grid_h, map.grid_w);
            v_map_mse = map_mse(map, gt);
            v_map_iou = map_iou(map, gt, config_.control.lambda);
            region = complement(gt);
        }
        // Multi-channel latents: evaluate per channel, then average the metric.
        try {
            double acc_mse = 0.0, acc_psnr = 0.0;
            for (int ch = 0; ch < edited.c; ++ch) {
                GrayImage a = latent_channel_image(edited, ch);
                GrayImage b = latent_channel_image(source, ch);
                acc_mse += masked_mse(a, b, region);
                acc_psnr += psnr(a, b, region);
            }
            v_bg_mse = acc_mse / edited.c;
            v_psnr = acc_psnr / edited.c;
        } catch (const Error&) {
            // empty background region: leave the fields null
        }
        try {
            double acc_ssim = 0.0;
            for (int ch = 0; ch < edited.c; ++ch) {
                acc_ssim += ssim(latent_channel_image(edited, ch),
                                 latent_channel_image(source, ch), region);
            }
            v_ssim = acc_ssim / edited.c;
        } catch (const Error&) {
            // grid smaller than the SSIM window, or no window center in region
        }

        nlohmann::json line = {
            {"id", item.id},
            {"map_mse", metric_or_null(v_map_mse)},
            {"map_iou", metric_or_null(v_map_iou)},
            {"bg_mse", metric_or_null(v_bg_mse)},
            {"psnr", metric_or_null(v_psnr)},
            {"ssim", metric_or_null(v_ssim)},
            {"lambda", config_.control.lambda},
            {"grid", std::to_string(map.grid_h) + "x" + std::to_string(map.grid_w)},
        };
        out += line.dump();
        out += '\n';
        ++lines;
    }
    if (lines == 0) {
        throw Error(ErrorCode::NotFound, "no evaluable results in '" + dir + "'");
    }
    write_file_atomic(join_path(dir, "metrics.jsonl"),
                      reinterpret_cast<const std::uint8_t*>(out.data()), out.size());
    return lines;
}

}  // namespace dcedit
