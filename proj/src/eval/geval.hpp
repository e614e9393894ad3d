// Copyright (c) 2026, dialogtune contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "common/jsonl.hpp"
#include "common/variant.hpp"
#include "judge/judge_client.hpp"

namespace dialogtune::eval {

enum class Criterion { kCoherence, kConsistency, kFluency, kRelevance };
inline constexpr std::array<Criterion, 4> kAllCriteria = {Criterion::kCoherence, Criterion::kConsistency,
                                                          Criterion::kFluency, Criterion::kRelevance};
const char* to_string(Criterion criterion);
std::optional<Criterion> parse_criterion(std::string_view name);

struct CriterionPrompt {
    Criterion criterion;
    std::string rubric;  // task, criteria, and evaluation steps
};

/// The four bundled rubrics.
std::vector<CriterionPrompt> default_criteria();
/// Rubric plus the slot block carrying the dialogue line and the response,
/// ending at the criterion's score field.
std::string render(const CriterionPrompt& prompt, const std::string& dialogue_line, const std::string& response);

/// Probability of each score 1..5 (index 0 is score 1).
using ScoreDistribution = std::array<double, 5>;

/// Softmax over the given (score, logprob) entries; scores that never
/// appear get probability 0. Entries for the same score are merged by
/// log-sum-exp. Returns nullopt if no entry is in 1..5.
std::optional<ScoreDistribution> distribution_from_logprobs(std::span<const std::pair<int, double>> entries);
double weighted_score(const ScoreDistribution& distribution);
inline double normalized_score(double weighted) { return (weighted - 1.0) / 4.0; }

/// "1".."5" (surrounding whitespace ignored) -> score, else nullopt.
std::optional<int> score_token(std::string_view token);

enum class ScoreStatus { kOk, kFallback, kInvalid };
const char* to_string(ScoreStatus status);

struct GevalResult {
    std::int64_t prompt_id = 0;
    ModelVariant variant = ModelVariant::kBase;
    Criterion criterion = Criterion::kCoherence;
    ScoreDistribution distribution{};
    double weighted_score = 0.0;
    double normalized_score = 0.0;
    ScoreStatus status = ScoreStatus::kOk;
    std::string judge_model_id;
    std::string judge_text;
    judge::Usage usage;
};

Json to_json(const GevalResult& result);
GevalResult geval_result_from_json(const Json& row);
std::string result_key(std::int64_t prompt_id, ModelVariant variant, Criterion criterion);

/// Reads the score at the first generated token that is one of "1".."5".
/// Falls back to the sampled integer (flagged) when the top-k carries no
/// score tokens or no log-probabilities came back. Unparseable text gets
/// one reprompt, then the result is flagged invalid.
GevalResult score_response(const CriterionPrompt& criterion, const std::string& dialogue_line,
                           const std::string& response, judge::JudgeClient& judge, int top_logprobs = 5,
                           const std::string& request_key = {});

struct EvalItem {
    std::int64_t prompt_id = 0;
    ModelVariant variant = ModelVariant::kBase;
    std::string dialogue_line;
    std::string response;
};

struct CriterionUsage {
    std::size_t requests = 0;
    long prompt_tokens = 0;
    long completion_tokens = 0;
    double cost = 0.0;
};

struct GevalRunOptions {
    int concurrency = 4;
    int top_logprobs = 5;
    double cost_per_1k_prompt_tokens = 0.0;
    double cost_per_1k_completion_tokens = 0.0;
};

struct GevalRunSummary {
    std::vector<GevalResult> results;  // every completed key, sorted
    std::size_t newly_scored = 0;
    std::size_t reused = 0;
    std::size_t failed = 0;  // judge errors, retried on the next run
    std::vector<std::string> diagnostics;
    std::map<std::string, CriterionUsage> usage;  // by criterion, this run
};

/// Scores every (item, criterion) whose key is not yet in `results_path`.
/// Each result is appended as soon as it exists, so a killed run resumes
/// without rescoring or duplicating keys. Per-item judge failures are
/// reported and skipped; anything else aborts the run.
GevalRunSummary run_geval(const std::vector<EvalItem>& items, const std::vector<CriterionPrompt>& criteria,
                          judge::JudgeClient& judge, const std::filesystem::path& results_path,
                          const GevalRunOptions& options = {});

}  // namespace dialogtune::eval
