// Copyright (c) 2026, dialogtune contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "eval/ballots.hpp"
#include "eval/geval.hpp"

namespace dialogtune::eval {

/// Linear interpolation between order statistics at h = (n - 1) * p.
double quantile(std::vector<double> values, double p);

struct SummaryStats {
    std::size_t count = 0;
    double mean = 0.0;
    double median = 0.0;
    double q1 = 0.0;
    double q3 = 0.0;
    double min = 0.0;
    double max = 0.0;
};

SummaryStats summarize(std::span<const double> values);

struct EvalReport {
    // variant -> criterion -> stats over normalized scores
    std::map<ModelVariant, std::map<Criterion, SummaryStats>> scores;
    std::size_t total_results = 0;
    std::size_t scored_results = 0;
    std::size_t invalid_results = 0;
    std::size_t fallback_results = 0;
    std::optional<BallotTally> human;
};

/// Either input may be empty, but not both. Invalid results are excluded
/// from the statistics and counted.
EvalReport build_report(const std::vector<GevalResult>& results, const std::optional<BallotTally>& human);

Json to_json(const EvalReport& report);

/// report.json, figure1.csv (per-variant means and human proportions), and
/// figure2.csv (every normalized score, for distribution plots).
void write_report(const std::filesystem::path& dir, const EvalReport& report,
                  const std::vector<GevalResult>& results);

}  // namespace dialogtune::eval
