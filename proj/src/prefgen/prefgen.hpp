// Copyright (c) 2026, dialogtune contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "common/jsonl.hpp"
#include "judge/judge_client.hpp"
#include "serve/generator.hpp"

namespace dialogtune::prefgen {

struct PromptSeed {
    std::int64_t prompt_id = 0;
    std::string text;
    std::string batch_id;
};

struct PromptGenConfig {
    /// "{count}" is replaced with the number of lines requested.
    std::string instruction_template =
        "Write {count} new lines of movie dialogue. Each line should be something one character says to "
        "another: a question, a confession, a threat, or a remark that invites a reply. Make every line "
        "standalone, varied in genre and tone, and under 25 words. Return a numbered list, one line per "
        "item, with no commentary.";
    int batch_size = 25;
    double temperature = 1.0;
    /// Follow-up requests allowed beyond ceil(n / batch_size) to refill
    /// duplicate or unparseable lines.
    int max_extra_requests = 20;
};

struct PromptGenResult {
    std::vector<PromptSeed> seeds;
    bool complete = false;
    /// Requests persisted so far; a rerun continues from here.
    std::size_t cursor = 0;
    std::size_t duplicates_dropped = 0;
    std::string error;
};

/// Numbered-list lines ("1. text", "2) text") in order, surrounding quotes
/// stripped; other lines ignored.
std::vector<std::string> parse_numbered_lines(const std::string& text);
/// Lowercased, whitespace-collapsed form used for duplicate detection.
std::string dedupe_key(const std::string& text);

/// Raw responses are appended to <state_dir>/prompt_requests.jsonl before
/// parsing; rerunning replays them and continues where the last run stopped.
PromptGenResult generate_prompts(std::size_t n, judge::JudgeClient& judge, const PromptGenConfig& config,
                                 const std::filesystem::path& state_dir);

struct CandidatePair {
    std::int64_t prompt_id = 0;
    std::string prompt;
    std::string response_a;
    std::string response_b;
    serve::GenerationParams params_a;
    serve::GenerationParams params_b;
    std::uint64_t seed_a = 0;
    std::uint64_t seed_b = 0;
};

struct SamplingStats {
    std::size_t pairs = 0;
    std::size_t resampled = 0;
    std::size_t discarded_identical = 0;
    std::size_t backend_failures = 0;
    std::vector<std::string> diagnostics;
};

/// Two independent samples with distinct seeds and identical params. An
/// identical (or empty) pair gets one resample round and is then discarded.
std::optional<CandidatePair> sample_candidates(const PromptSeed& seed, serve::ResponseGenerator& generator,
                                               const serve::GenerationParams& params, std::uint64_t base_seed,
                                               SamplingStats& stats,
                                               const std::optional<std::string>& system_prompt = std::nullopt);

enum class PresentationOrder { kAb, kBa };
const char* to_string(PresentationOrder order);

struct PreferenceRecord {
    std::int64_t prompt_id = 0;
    std::string prompt;
    std::string chosen;
    std::string rejected;
    std::string judge_model_id;
    PresentationOrder presentation_order = PresentationOrder::kAb;
};

enum class Verdict { kFirst, kSecond };
std::optional<Verdict> parse_verdict(const std::string& text);

std::string preference_prompt(const std::string& prompt, const std::string& first, const std::string& second);

/// Order drawn from the per-record seed, verdict mapped back through it.
/// An unparseable verdict gets one stricter reprompt, then nullopt with a
/// diagnostic.
std::optional<PreferenceRecord> adjudicate(const CandidatePair& pair, judge::JudgeClient& judge,
                                           std::uint64_t base_seed, std::string* diagnostic = nullptr);

PresentationOrder presentation_order_for(std::int64_t prompt_id, std::uint64_t base_seed);

Json to_json(const PromptSeed& seed);
PromptSeed seed_from_json(const Json& row);
Json to_json(const CandidatePair& pair);
CandidatePair candidate_from_json(const Json& row);
Json to_json(const PreferenceRecord& record);
PreferenceRecord preference_from_json(const Json& row);

struct PrefgenConfig {
    std::size_t prompt_count = 10000;
    PromptGenConfig prompts;
    serve::GenerationParams params;
    std::uint64_t seed = 0;
    int concurrency = 4;
    std::optional<std::string> system_prompt;
};

struct PrefgenSummary {
    std::size_t prompts = 0;
    std::size_t candidates = 0;
    std::size_t records = 0;
    std::size_t skipped_verdicts = 0;
    SamplingStats sampling;
    bool prompts_complete = false;
    std::string prompt_error;
};

/// Full pass: prompts -> candidates -> verdicts, each step resumable.
/// State in <dir>: prompt_requests.jsonl, prompts.jsonl, candidates.jsonl,
/// candidate_skips.jsonl, verdicts.jsonl (append-only), and the final
/// preferences.jsonl sorted by prompt_id.
PrefgenSummary run_prefgen(const PrefgenConfig& config, judge::JudgeClient& judge,
                           serve::ResponseGenerator& generator, const std::filesystem::path& dir);

}  // namespace dialogtune::prefgen
