#include "dcedit/selftest.hpp"

#include <cmath>
#include <cstdlib>

#include "dcedit/bench.hpp"
#include "dcedit/error.hpp"
#include "dcedit/metrics.hpp"
#include "dcedit/rng.hpp"

namespace dcedit {

namespace {

#ifdef DCEDIT_SELFTEST_INJECT_FAULT
constexpr double kRowSumTarget = 1.5;  // deliberately wrong
#else
constexpr double kRowSumTarget = 1.0;
#endif

class SuiteRunner {
public:
    explicit SuiteRunner(std::string name) { suite_.name = std::move(name); }

    void check(bool ok) {
        ++suite_.total;
        if (ok) ++suite_.passed;
    }

    SelftestSuite finish() { return suite_; }

private:
    SelftestSuite suite_;
};

Matrix random_matrix(SplitMix64& gen, std::size_t rows, std::size_t cols, double scale) {
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = gen.next_symmetric(scale);
    return m;
}

Matrix random_row_stochastic(SplitMix64& gen, std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            double v = 0.05 + gen.next_unit();
            m(i, j) = v;
            sum += v;
        }
        for (std::size_t j = 0; j < n; ++j) m(i, j) /= sum;
    }
    return m;
}

SelftestSuite suite_numeric(const RunConfig&) {
    SuiteRunner suite("numeric-primitives");
    SplitMix64 gen(0xD15EA5E);
    for (int rep = 0; rep < 20; ++rep) {
        Matrix m = random_matrix(gen, 6, 6, rep % 4 == 0 ? 500.0 : 3.0);
        Matrix soft = softmax_rows(m);
        for (std::size_t i = 0; i < soft.rows(); ++i) {
            double sum = 0.0;
            for (std::size_t j = 0; j < soft.cols(); ++j) sum += soft(i, j);
            suite.check(std::abs(sum - kRowSumTarget) <= 1e-6);
        }
    }
    for (int rep = 0; rep < 20; ++rep) {
        Vector v(32);
        for (auto& x : v) x = gen.next_symmetric(5.0);
        Vector n1 = minmax_normalize(v);
        suite.check(minmax_normalize(n1) == n1);
        suite.check(*std::min_element(n1.begin(), n1.end()) == 0.0);
        suite.check(*std::max_element(n1.begin(), n1.end()) == 1.0);
    }
    for (int rep = 0; rep < 50; ++rep) {
        Vector v(1 + static_cast<std::size_t>(gen.next() % 40));
        for (auto& x : v) x = gen.next_symmetric(10.0);
        Vector sorted = v;
        std::sort(sorted.begin(), sorted.end());
        for (int lambda = 0; lambda <= 100; lambda += 10) {
            auto n = static_cast<long long>(v.size());
            long long rank = std::max(1LL, (lambda * n + 99) / 100);
            suite.check(percentile_threshold(v, lambda) ==
                        sorted[static_cast<std::size_t>(rank - 1)]);
        }
    }
    for (int rep = 0; rep < 10; ++rep) {
        Matrix m = random_row_stochastic(gen, 8);
        Matrix inv = ridge_inverse(m, 1e-6);
        Matrix a = m;
        for (std::size_t i = 0; i < 8; ++i) a(i, i) += 1e-6;
        Matrix prod = matmul(a, inv);
        double worst = 0.0;
        for (std::size_t i = 0; i < 8; ++i)
            for (std::size_t j = 0; j < 8; ++j)
                worst = std::max(worst, std::abs(prod(i, j) - (i == j ? 1.0 : 0.0)));
        suite.check(worst <= 1e-4);
    }
    return suite.finish();
}

SelftestSuite suite_attention(const RunConfig& config) {
    SuiteRunner suite("joint-attention");
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        ModelConfig mc = config.model;
        mc.seed = seed;
        Model model = init_model(mc);
        LatentGrid z(4, 4, 3);
        SplitMix64 gen(seed);
        for (auto& x : z.data) x = gen.next_gaussian();
        std::vector<std::string> words{"a", "small", "test", "prompt"};
        VelocityRequest req;
        req.capture_attention = true;
        VelocityResult res = velocity(model, z, embed_words(words, mc), spans_for_words(words),
                                      0.0, req);
        suite.check(res.capture.records.size() ==
                    static_cast<std::size_t>(mc.layers) * static_cast<std::size_t>(mc.heads));
        for (const auto& record : res.capture.records) {
            bool rows_ok = true;
            for (std::size_t i = 0; i < record.matrix.rows(); ++i) {
                double sum = 0.0;
                for (std::size_t j = 0; j < record.matrix.cols(); ++j) sum += record.matrix(i, j);
                rows_ok = rows_ok && std::abs(sum - 1.0) <= 1e-5;
            }
            suite.check(rows_ok);
            AttentionQuadrants q = split_quadrants(record);
            const auto n = static_cast<std::size_t>(record.layout.n_text);
            bool partition_ok = true;
            for (std::size_t i = 0; i < record.matrix.rows(); ++i) {
                for (std::size_t j = 0; j < record.matrix.cols(); ++j) {
                    double block = i < n ? (j < n ? q.text_text(i, j) : q.text_visual(i, j - n))
                                         : (j < n ? q.visual_text(i - n, j)
                                                  : q.visual_visual(i - n, j - n));
                    partition_ok = partition_ok && block == record.matrix(i, j);
                }
            }
            suite.check(partition_ok);
        }
    }
    return suite.finish();
}

SelftestSuite suite_refinement(const RunConfig& config) {
    SuiteRunner suite("map-refinement");
    SplitMix64 gen(0xFACADE);
    for (int rep = 0; rep < 10; ++rep) {
        const std::size_t m = 9, n = 4;
        FusedMaps fused;
        fused.cross = Matrix(m, n);
        for (std::size_t i = 0; i < fused.cross.size(); ++i) fused.cross.data()[i] = gen.next_unit();
        fused.visual_affinity = Matrix::identity(m);
        fused.textual = Matrix::identity(n);
        fused.grid_h = 3;
        fused.grid_w = 3;
        Selection sel = make_selection({1}, n);
        RefinedMap refined = refine(fused, sel, 0.0);
        Vector expected = minmax_normalize(select_and_aggregate(fused.cross, sel));
        suite.check(refined.values == expected);

        RefinedMap with_eps = refine(fused, sel, 1e-9);
        double worst = 0.0;
        for (std::size_t i = 0; i < m; ++i)
            worst = std::max(worst, std::abs(with_eps.values[i] - refined.values[i]));
        suite.check(worst <= 1e-6);

        fused.visual_affinity = random_row_stochastic(gen, m);
        fused.textual = random_row_stochastic(gen, n);
        RefinedMap general = refine(fused, sel, config.epsilon);
        bool in_range = true;
        for (double v : general.values) in_range = in_range && v >= 0.0 && v <= 1.0;
        suite.check(in_range);
    }
    return suite.finish();
}

class SelftestPlainFlow;

SelftestSuite suite_flow(const RunConfig& config) {
    SuiteRunner suite("flow-control");
    ModelConfig mc = config.model;
    const int r = resolve_r_layers(config.control, mc.layers);
    std::vector<std::string> source{"a", "red", "bird"};
    std::vector<std::string> target{"a", "blue", "bird"};
    Schedule schedule = make_schedule(config.control.steps);

    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        mc.seed = seed;
        Model model = init_model(mc);
        MmditFlow flow(model, source, target, r);
        LatentGrid z0(6, 6, 2);
        SplitMix64 gen(seed * 31);
        for (auto& x : z0.data) x = gen.next_gaussian();

        InvertResult inverted = invert(flow, {z0, 0.0}, schedule, config.control.cfg_scale, r);
        LatentState recon = reconstruct_cached(inverted.trace);
        double worst = 0.0;
        for (std::size_t i = 0; i < z0.data.size(); ++i)
            worst = std::max(worst, std::abs(recon.grid.data[i] - z0.data[i]));
        suite.check(worst <= 1e-5);

        RefinedMap map;
        map.grid_h = 6;
        map.grid_w = 6;
        map.values.resize(36);
        for (auto& v : map.values) v = gen.next_unit();

        // Background exactness at b = K.
        ControlConfig control = config.control;
        control.r_layers = r;
        control.latent_steps = control.steps;
        BinaryMask mask = binarize_map(map, control.lambda);
        LatentState edited = sample_edit(flow, inverted.trace, map, control, &mask);
        bool background_exact = true;
        for (std::size_t cell = 0; cell < mask.bits.size(); ++cell) {
            if (mask.bits[cell]) continue;
            for (int ch = 0; ch < 2; ++ch) {
                background_exact = background_exact &&
                                   std::abs(edited.grid.data[cell * 2 + ch] - z0.data[cell * 2 + ch]) <= 1e-6;
            }
        }
        suite.check(background_exact);

        // No-control run equals a plain Euler replay.
        control.latent_steps = 0;
        control.feature_steps = 0;
        LatentState uncontrolled = sample_edit(flow, inverted.trace, map, control);
        LatentState replay = inverted.trace.latents.back();
        for (int i = schedule.steps(); i >= 1; --i) {
            double t_now = schedule.times[static_cast<std::size_t>(i)];
            double t_prev = schedule.times[static_cast<std::size_t>(i) - 1];
            LatentGrid vc = flow.velocity_at(replay, t_now, FlowModel::Prompt::Target, nullptr, nullptr);
            LatentGrid vu = flow.velocity_at(replay, t_now, FlowModel::Prompt::Uncond, nullptr, nullptr);
            replay.grid = add_scaled(replay.grid, t_prev - t_now,
                                     cfg_combine(vc, vu, control.cfg_scale));
            replay.t = t_prev;
        }
        suite.check(uncontrolled.grid == replay.grid);
    }
    return suite.finish();
}

SelftestSuite suite_metrics(const RunConfig&) {
    SuiteRunner suite("image-metrics");
    SplitMix64 gen(0xBEEF);
    for (int rep = 0; rep < 5; ++rep) {
        GrayImage a(13, 13);
        for (auto& p : a.pixels) p = gen.next_unit();
        GroundTruthMask all(13, 13, 1);
        suite.check(ssim(a, a, all) == 1.0);
        suite.check(psnr(a, a, all) == 100.0);
    }
    {
        GroundTruthMask all(4, 4, 1);
        GrayImage a(4, 4, 0.0);
        double last = 101.0;
        bool monotone = true;
        for (double delta : {0.01, 0.05, 0.1, 0.3}) {
            GrayImage b(4, 4, delta);
            double p = psnr(a, b, all);
            monotone = monotone && p < last;
            last = p;
        }
        suite.check(monotone);
    }
    {
        RefinedMap map;
        map.grid_h = 2;
        map.grid_w = 2;
        map.values = {0.0, 0.0, 1.0, 1.0};
        GroundTruthMask gt(2, 2, 0);
        gt.bits = {0, 0, 1, 1};
        suite.check(map_iou(map, gt, 80.0) == 1.0);
        GroundTruthMask disjoint(2, 2, 0);
        disjoint.bits = {1, 1, 0, 0};
        suite.check(map_iou(map, disjoint, 80.0) == 0.0);
    }
    {
        GroundTruthMask checker(4, 4, 0);
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 4; ++x) checker.bits[static_cast<std::size_t>(y) * 4 + x] = (x + y) % 2;
        GroundTruthMask down = resample_mask(checker, 2, 2);
        suite.check(down.bits == std::vector<std::uint8_t>({1, 1, 1, 1}));
    }
    return suite.finish();
}

SelftestSuite suite_prompt_diffs(const RunConfig&) {
    SuiteRunner suite("prompt-diffs");
    SplitMix64 gen(0x15BAD);
    const std::vector<std::string> lexicon{"a", "red", "bird", "on", "the", "branch",
                                           "green", "tree", "cat", "sits", "blue", "sky"};
    for (int rep = 0; rep < 100; ++rep) {
        std::vector<std::string> source;
        std::size_t len = 3 + gen.next() % 8;
        for (std::size_t i = 0; i < len; ++i) source.push_back(lexicon[gen.next() % lexicon.size()]);
        std::vector<std::string> target = source;
        std::size_t pos = gen.next() % target.size();
        switch (gen.next() % 3) {
            case 0: target[pos] = lexicon[gen.next() % lexicon.size()]; break;
            case 1:
                target.insert(target.begin() + static_cast<long>(pos),
                              lexicon[gen.next() % lexicon.size()]);
                break;
            default:
                if (target.size() > 1) target.erase(target.begin() + static_cast<long>(pos));
                break;
        }
        PromptDiff diff = diff_prompts(source, target);
        suite.check(apply_diff(source, target, diff) == target);
    }
    {
        std::vector<std::string> p{"same", "words"};
        suite.check(diff_prompts(p, p).empty());
    }
    return suite.finish();
}

}  // namespace

SelftestReport run_selftest(const RunConfig& config) {
    SelftestReport report;
    report.suites.push_back(suite_numeric(config));
    report.suites.push_back(suite_attention(config));
    report.suites.push_back(suite_refinement(config));
    report.suites.push_back(suite_flow(config));
    report.suites.push_back(suite_metrics(config));
    report.suites.push_back(suite_prompt_diffs(config));
    return report;
}

void print_selftest_report(const SelftestReport& report, std::FILE* out) {
    for (const auto& suite : report.suites) {
        std::fprintf(out, "%-20s %d/%d passed%s\n", suite.name.c_str(), suite.passed, suite.total,
                     suite.passed == suite.total ? "" : "  [FAIL]");
    }
}

}  // namespace dcedit
