// Copyright (c) 2026, dialogtune contributors
// SPDX-License-Identifier: Apache-2.0

#include "eval/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "common/error.hpp"

namespace dialogtune::eval {

double quantile(std::vector<double> values, double p) {
    require(!values.empty(), ErrorCode::kInvalidArgument, "quantile of an empty set");
    require(p >= 0.0 && p <= 1.0, ErrorCode::kInvalidArgument, "quantile p must be in [0, 1]");
    std::sort(values.begin(), values.end());
    const double h = static_cast<double>(values.size() - 1) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

SummaryStats summarize(std::span<const double> values) {
    require(!values.empty(), ErrorCode::kInvalidArgument, "summary of an empty set");
    std::vector<double> v(values.begin(), values.end());
    SummaryStats s;
    s.count = v.size();
    s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    s.median = quantile(v, 0.5);
    s.q1 = quantile(v, 0.25);
    s.q3 = quantile(v, 0.75);
    const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
    s.min = *mn;
    s.max = *mx;
    return s;
}

EvalReport build_report(const std::vector<GevalResult>& results, const std::optional<BallotTally>& human) {
    require(!results.empty() || human.has_value(), ErrorCode::kInvalidArgument,
            "report needs G-Eval results or a ballot tally");
    EvalReport report;
    report.total_results = results.size();
    std::map<ModelVariant, std::map<Criterion, std::vector<double>>> values;
    for (const auto& r : results) {
        if (r.status == ScoreStatus::kInvalid) {
            ++report.invalid_results;
            continue;
        }
        if (r.status == ScoreStatus::kFallback) {
            ++report.fallback_results;
        }
        values[r.variant][r.criterion].push_back(r.normalized_score);
        ++report.scored_results;
    }
    for (const auto& [variant, by_criterion] : values) {
        for (const auto& [criterion, v] : by_criterion) {
            report.scores[variant][criterion] = summarize(v);
        }
    }
    report.human = human;
    return report;
}

Json to_json(const EvalReport& report) {
    Json scores = Json::object();
    for (const auto& [variant, by_criterion] : report.scores) {
        Json v = Json::object();
        for (const auto& [criterion, s] : by_criterion) {
            v[to_string(criterion)] = {{"count", s.count}, {"mean", s.mean},   {"median", s.median},
                                       {"q1", s.q1},       {"q3", s.q3},       {"min", s.min},
                                       {"max", s.max}};
        }
        scores[to_string(variant)] = std::move(v);
    }
    Json out{{"geval",
              {{"scores", std::move(scores)},
               {"total_results", report.total_results},
               {"scored_results", report.scored_results},
               {"invalid_results", report.invalid_results},
               {"fallback_results", report.fallback_results}}}};
    if (report.human) {
        Json proportions = Json::object();
        Json picks = Json::object();
        for (auto v : kAllVariants) {
            proportions[to_string(v)] = report.human->proportions.at(v);
            picks[to_string(v)] = report.human->picks.at(v);
        }
        out["human"] = {{"proportions", std::move(proportions)},
                        {"picks", std::move(picks)},
                        {"ballots", report.human->total},
                        {"rejected", report.human->rejected}};
    } else {
        out["human"] = nullptr;
    }
    return out;
}

void write_report(const std::filesystem::path& dir, const EvalReport& report, const std::vector<GevalResult>& results) {
    std::filesystem::create_directories(dir);
    write_json(dir / "report.json", to_json(report));

    std::ostringstream fig1;
    fig1 << std::setprecision(10) << "variant,metric,value\n";
    for (const auto& [variant, by_criterion] : report.scores) {
        for (const auto& [criterion, s] : by_criterion) {
            fig1 << to_string(variant) << ',' << to_string(criterion) << ',' << s.mean << '\n';
        }
    }
    if (report.human) {
        for (auto v : kAllVariants) {
            fig1 << to_string(v) << ",human_preference," << report.human->proportions.at(v) << '\n';
        }
    }
    write_text(dir / "figure1.csv", fig1.str());

    std::ostringstream fig2;
    fig2 << std::setprecision(10) << "variant,criterion,prompt_id,normalized_score\n";
    for (const auto& r : results) {
        if (r.status != ScoreStatus::kInvalid) {
            fig2 << to_string(r.variant) << ',' << to_string(r.criterion) << ',' << r.prompt_id << ','
                 << r.normalized_score << '\n';
        }
    }
    write_text(dir / "figure2.csv", fig2.str());
}

}  // namespace dialogtune::eval
