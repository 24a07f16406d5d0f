#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include "dcedit/pipeline.hpp"

namespace dcedit {

struct SelftestSuite {
    std::string name;
    int passed = 0;
    int total = 0;
};

struct SelftestReport {
    std::vector<SelftestSuite> suites;

    bool all_passed() const noexcept {
        for (const auto& s : suites) {
            if (s.passed != s.total) return false;
        }
        return !suites.empty();
    }
};

/// Runs the per-module invariant suites against the configured model/grid.
/// Building with DCEDIT_SELFTEST_INJECT_FAULT defined flips one expectation,
/// for verifying that failures propagate to the exit code.
SelftestReport run_selftest(const RunConfig& config);

void print_selftest_report(const SelftestReport& report, std::FILE* out);

}  // namespace dcedit
