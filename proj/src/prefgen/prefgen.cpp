// Copyright (c) 2026, dialogtune contributors
// SPDX-License-Identifier: Apache-2.0

#include "prefgen/prefgen.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <exception>
#include <map>
#include <mutex>
#include <regex>
#include <set>
#include <thread>
#include <unordered_set>

#include "common/error.hpp"
#include "common/rng.hpp"

namespace dialogtune::prefgen {
namespace {

constexpr std::uint64_t kOrderStream = 0x4f52444552ULL;  // "ORDER"

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

std::string strip_quotes(std::string s) {
    static const std::vector<std::pair<std::string, std::string>> pairs = {
        {"\"", "\""}, {"'", "'"}, {"\xE2\x80\x9C", "\xE2\x80\x9D"}, {"\xE2\x80\x98", "\xE2\x80\x99"}};
    for (const auto& [open, close] : pairs) {
        if (s.size() >= open.size() + close.size() && s.compare(0, open.size(), open) == 0 &&
            s.compare(s.size() - close.size(), close.size(), close) == 0) {
            return trim(s.substr(open.size(), s.size() - open.size() - close.size()));
        }
    }
    return s;
}

std::string replace_all(std::string text, const std::string& from, const std::string& to) {
    for (auto pos = text.find(from); pos != std::string::npos; pos = text.find(from, pos + to.size())) {
        text.replace(pos, from.size(), to);
    }
    return text;
}

std::string batch_name(std::size_t index) {
    std::string digits = std::to_string(index);
    return "batch-" + std::string(digits.size() < 5 ? 5 - digits.size() : 0, '0') + digits;
}

serve::Generation generate_with_retry(serve::ResponseGenerator& generator, const std::vector<dataset::ChatTurn>& turns,
                                      const serve::GenerationParams& params, std::uint64_t seed) {
    try {
        return generator.generate(turns, params, seed);
    } catch (const Error&) {
        return generator.generate(turns, params, seed);
    }
}

}  // namespace

std::vector<std::string> parse_numbered_lines(const std::string& text) {
    static const std::regex item(R"(^\s*\(?\d+[.):]\s*(.*\S)\s*$)");
    std::vector<std::string> lines;
    std::size_t start = 0;
    while (start <= text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string::npos) {
            end = text.size();
        }
        const std::string line = text.substr(start, end - start);
        std::smatch m;
        if (std::regex_match(line, m, item)) {
            std::string body = strip_quotes(trim(m[1].str()));
            if (!body.empty()) {
                lines.push_back(std::move(body));
            }
        }
        start = end + 1;
    }
    return lines;
}

std::string dedupe_key(const std::string& text) {
    std::string key;
    bool space = false;
    for (unsigned char c : text) {
        if (std::isspace(c)) {
            space = !key.empty();
            continue;
        }
        if (space) {
            key.push_back(' ');
            space = false;
        }
        key.push_back(static_cast<char>(std::tolower(c)));
    }
    return key;
}

PromptGenResult generate_prompts(std::size_t n, judge::JudgeClient& judge, const PromptGenConfig& config,
                                 const std::filesystem::path& state_dir) {
    require(config.batch_size >= 1, ErrorCode::kConfig, "prompt batch_size must be >= 1");
    PromptGenResult result;
    if (n == 0) {
        result.complete = true;
        return result;
    }
    const auto log_path = state_dir / "prompt_requests.jsonl";
    std::unordered_set<std::string> seen;

    auto absorb = [&](const std::string& text, std::size_t request_index) {
        for (auto& line : parse_numbered_lines(text)) {
            if (result.seeds.size() >= n) {
                break;
            }
            if (!seen.insert(dedupe_key(line)).second) {
                ++result.duplicates_dropped;
                continue;
            }
            result.seeds.push_back(
                {static_cast<std::int64_t>(result.seeds.size()), std::move(line), batch_name(request_index)});
        }
    };

    if (std::filesystem::exists(log_path)) {
        for (const auto& row : read_jsonl(log_path)) {
            absorb(row.at("text").get<std::string>(), result.cursor);
            ++result.cursor;
        }
    }

    const std::size_t base_requests = (n + static_cast<std::size_t>(config.batch_size) - 1) /
                                      static_cast<std::size_t>(config.batch_size);
    const std::size_t max_requests = base_requests + static_cast<std::size_t>(std::max(0, config.max_extra_requests));
    JsonlAppender log(log_path);
    while (result.seeds.size() < n && result.cursor < max_requests) {
        const std::size_t want = std::min<std::size_t>(static_cast<std::size_t>(config.batch_size), n - result.seeds.size());
        auto request = judge::single_prompt(
            judge.model_id(), replace_all(config.instruction_template, "{count}", std::to_string(want)),
            config.temperature);
        request.request_key = "prompts/" + std::to_string(result.cursor);
        judge::JudgeResponse response;
        try {
            response = judge.complete(request);
        } catch (const judge::JudgeError& e) {
            result.error = e.what();
            break;
        }
        log.append({{"request_index", result.cursor},
                    {"batch_id", batch_name(result.cursor)},
                    {"requested", want},
                    {"text", response.text}});
        absorb(response.text, result.cursor);
        ++result.cursor;
    }
    result.complete = result.seeds.size() >= n;
    if (!result.complete && result.error.empty()) {
        result.error = "request budget exhausted with " + std::to_string(result.seeds.size()) + " of " +
                       std::to_string(n) + " unique prompts";
    }
    std::vector<Json> rows;
    for (const auto& s : result.seeds) {
        rows.push_back(to_json(s));
    }
    write_jsonl(state_dir / "prompts.jsonl", rows);
    return result;
}

std::optional<CandidatePair> sample_candidates(const PromptSeed& seed, serve::ResponseGenerator& generator,
                                               const serve::GenerationParams& params, std::uint64_t base_seed,
                                               SamplingStats& stats, const std::optional<std::string>& system_prompt) {
    const auto turns = serve::single_turn(seed.text, system_prompt);
    const auto stream = static_cast<std::uint64_t>(seed.prompt_id) * 4;
    for (int round = 0; round < 2; ++round) {
        CandidatePair pair{seed.prompt_id, seed.text, {}, {}, params, params,
                           derive_seed(base_seed, stream + 2 * round), derive_seed(base_seed, stream + 2 * round + 1)};
        try {
            pair.response_a = trim(generate_with_retry(generator, turns, params, pair.seed_a).text);
            pair.response_b = trim(generate_with_retry(generator, turns, params, pair.seed_b).text);
        } catch (const Error& e) {
            ++stats.backend_failures;
            stats.diagnostics.push_back("prompt " + std::to_string(seed.prompt_id) + ": generation failed: " + e.what());
            return std::nullopt;
        }
        if (!pair.response_a.empty() && !pair.response_b.empty() && pair.response_a != pair.response_b) {
            ++stats.pairs;
            return pair;
        }
        if (round == 0) {
            ++stats.resampled;
        }
    }
    ++stats.discarded_identical;
    stats.diagnostics.push_back("prompt " + std::to_string(seed.prompt_id) +
                                ": identical or empty candidates after resample; pair discarded");
    return std::nullopt;
}

const char* to_string(PresentationOrder order) { return order == PresentationOrder::kAb ? "ab" : "ba"; }

std::optional<Verdict> parse_verdict(const std::string& text) {
    static const std::regex word(R"(\b(first|second|1|2)\b)", std::regex::icase);
    std::smatch m;
    if (!std::regex_search(text, m, word)) {
        return std::nullopt;
    }
    const std::string w = dedupe_key(m[1].str());
    return (w == "first" || w == "1") ? Verdict::kFirst : Verdict::kSecond;
}

std::string preference_prompt(const std::string& prompt, const std::string& first, const std::string& second) {
    return "You are reviewing replies for a movie script. Below is a line of dialogue followed by two candidate "
           "replies.\n\nPrompt:\n" +
           prompt + "\n\nResponse 1:\n" + first + "\n\nResponse 2:\n" + second +
           "\n\nWhich response is the more realistic and natural reply to the prompt? Answer \"first\" or "
           "\"second\".";
}

PresentationOrder presentation_order_for(std::int64_t prompt_id, std::uint64_t base_seed) {
    Rng rng(derive_seed(derive_seed(base_seed, kOrderStream), static_cast<std::uint64_t>(prompt_id)));
    return rng.uniform() < 0.5 ? PresentationOrder::kAb : PresentationOrder::kBa;
}

std::optional<PreferenceRecord> adjudicate(const CandidatePair& pair, judge::JudgeClient& judge, std::uint64_t base_seed,
                                           std::string* diagnostic) {
    require(!pair.response_a.empty() && !pair.response_b.empty(), ErrorCode::kInvalidArgument,
            "adjudicate requires two non-empty responses");
    const PresentationOrder order = presentation_order_for(pair.prompt_id, base_seed);
    const std::string& first = order == PresentationOrder::kAb ? pair.response_a : pair.response_b;
    const std::string& second = order == PresentationOrder::kAb ? pair.response_b : pair.response_a;
    const std::string prompt = preference_prompt(pair.prompt, first, second);

    std::string last_text;
    for (int attempt = 0; attempt < 2; ++attempt) {
        auto request = judge::single_prompt(
            judge.model_id(),
            attempt == 0 ? prompt : prompt + "\nReply with exactly one word: first or second.", 0.0);
        request.request_key = "verdict/" + std::to_string(pair.prompt_id) + "/" + std::to_string(attempt);
        last_text = judge.complete(request).text;
        if (const auto verdict = parse_verdict(last_text)) {
            const bool first_wins = *verdict == Verdict::kFirst;
            return PreferenceRecord{pair.prompt_id,
                                    pair.prompt,
                                    first_wins ? first : second,
                                    first_wins ? second : first,
                                    judge.model_id(),
                                    order};
        }
    }
    if (diagnostic != nullptr) {
        *diagnostic = "prompt " + std::to_string(pair.prompt_id) + ": unparseable verdict after reprompt: " +
                      last_text.substr(0, 80);
    }
    return std::nullopt;
}

Json to_json(const PromptSeed& seed) {
    return Json{{"prompt_id", seed.prompt_id}, {"text", seed.text}, {"batch_id", seed.batch_id}};
}

PromptSeed seed_from_json(const Json& row) {
    return {row.at("prompt_id").get<std::int64_t>(), row.at("text").get<std::string>(),
            row.value("batch_id", "")};
}

Json to_json(const CandidatePair& pair) {
    return Json{{"prompt_id", pair.prompt_id}, {"prompt", pair.prompt},
                {"response_a", pair.response_a}, {"response_b", pair.response_b},
                {"params_a", serve::to_json(pair.params_a)}, {"params_b", serve::to_json(pair.params_b)},
                {"seed_a", pair.seed_a}, {"seed_b", pair.seed_b}};
}

CandidatePair candidate_from_json(const Json& row) {
    return {row.at("prompt_id").get<std::int64_t>(),
            row.at("prompt").get<std::string>(),
            row.at("response_a").get<std::string>(),
            row.at("response_b").get<std::string>(),
            serve::params_from_json(row.at("params_a")),
            serve::params_from_json(row.at("params_b")),
            row.at("seed_a").get<std::uint64_t>(),
            row.at("seed_b").get<std::uint64_t>()};
}

Json to_json(const PreferenceRecord& record) {
    return Json{{"prompt_id", record.prompt_id},
                {"prompt", record.prompt},
                {"chosen", record.chosen},
                {"rejected", record.rejected},
                {"judge_model_id", record.judge_model_id},
                {"presentation_order", to_string(record.presentation_order)}};
}

PreferenceRecord preference_from_json(const Json& row) {
    const std::string order = row.at("presentation_order").get<std::string>();
    require(order == "ab" || order == "ba", ErrorCode::kInvalidArgument, "presentation_order must be ab or ba");
    return {row.value("prompt_id", std::int64_t{0}), row.at("prompt").get<std::string>(),
            row.at("chosen").get<std::string>(), row.at("rejected").get<std::string>(),
            row.value("judge_model_id", ""), order == "ab" ? PresentationOrder::kAb : PresentationOrder::kBa};
}

PrefgenSummary run_prefgen(const PrefgenConfig& config, judge::JudgeClient& judge, serve::ResponseGenerator& generator,
                           const std::filesystem::path& dir) {
    require(config.concurrency >= 1, ErrorCode::kConfig, "prefgen concurrency must be >= 1");
    std::filesystem::create_directories(dir);
    PrefgenSummary summary;

    const PromptGenResult prompts = generate_prompts(config.prompt_count, judge, config.prompts, dir);
    summary.prompts = prompts.seeds.size();
    summary.prompts_complete = prompts.complete;
    summary.prompt_error = prompts.error;

    // Candidates, sequential: the generator owns one backend.
    const auto candidates_path = dir / "candidates.jsonl";
    const auto skips_path = dir / "candidate_skips.jsonl";
    std::map<std::int64_t, CandidatePair> candidates;
    std::set<std::int64_t> skipped;
    if (std::filesystem::exists(candidates_path)) {
        for (const auto& row : read_jsonl(candidates_path)) {
            auto pair = candidate_from_json(row);
            candidates.emplace(pair.prompt_id, std::move(pair));
        }
    }
    if (std::filesystem::exists(skips_path)) {
        for (const auto& row : read_jsonl(skips_path)) {
            skipped.insert(row.at("prompt_id").get<std::int64_t>());
        }
    }
    {
        JsonlAppender candidate_log(candidates_path);
        JsonlAppender skip_log(skips_path);
        for (const auto& seed : prompts.seeds) {
            if (candidates.count(seed.prompt_id) != 0 || skipped.count(seed.prompt_id) != 0) {
                continue;
            }
            const std::size_t failures_before = summary.sampling.backend_failures;
            auto pair = sample_candidates(seed, generator, config.params, config.seed, summary.sampling,
                                          config.system_prompt);
            if (pair) {
                candidate_log.append(to_json(*pair));
                candidates.emplace(pair->prompt_id, std::move(*pair));
            } else if (summary.sampling.backend_failures == failures_before) {
                // Degenerate pairs are deterministic; backend failures retry on resume.
                skip_log.append({{"prompt_id", seed.prompt_id}, {"reason", summary.sampling.diagnostics.back()}});
                skipped.insert(seed.prompt_id);
            }
        }
    }
    summary.candidates = candidates.size();
    summary.sampling.discarded_identical = skipped.size();

    // Verdicts, bounded-parallel; the append-only log is the only shared state.
    const auto verdicts_path = dir / "verdicts.jsonl";
    std::map<std::int64_t, Json> verdicts;
    if (std::filesystem::exists(verdicts_path)) {
        for (const auto& row : read_jsonl(verdicts_path)) {
            verdicts.emplace(row.at("prompt_id").get<std::int64_t>(), row);
        }
    }
    std::vector<const CandidatePair*> pending;
    for (const auto& [id, pair] : candidates) {
        if (verdicts.count(id) == 0) {
            pending.push_back(&pair);
        }
    }
    {
        JsonlAppender verdict_log(verdicts_path);
        std::atomic<std::size_t> next{0};
        std::mutex mutex;
        std::exception_ptr fatal;
        auto worker = [&] {
            while (true) {
                {
                    std::lock_guard lock(mutex);
                    if (fatal) {
                        return;
                    }
                }
                const std::size_t i = next.fetch_add(1);
                if (i >= pending.size()) {
                    return;
                }
                const CandidatePair& pair = *pending[i];
                try {
                    std::string diagnostic;
                    const auto record = adjudicate(pair, judge, config.seed, &diagnostic);
                    Json row{{"prompt_id", pair.prompt_id}};
                    if (record) {
                        row["status"] = "ok";
                        row["record"] = to_json(*record);
                    } else {
                        row["status"] = "skipped";
                        row["diagnostic"] = diagnostic;
                    }
                    verdict_log.append(row);
                    std::lock_guard lock(mutex);
                    verdicts.emplace(pair.prompt_id, std::move(row));
                } catch (const judge::JudgeError& e) {
                    std::lock_guard lock(mutex);
                    summary.sampling.diagnostics.push_back("prompt " + std::to_string(pair.prompt_id) +
                                                           ": judge failed: " + e.what());
                } catch (...) {
                    std::lock_guard lock(mutex);
                    if (!fatal) {
                        fatal = std::current_exception();
                    }
                }
            }
        };
        std::vector<std::thread> threads;
        const auto workers = std::min<std::size_t>(static_cast<std::size_t>(config.concurrency), pending.size());
        for (std::size_t t = 0; t < workers; ++t) {
            threads.emplace_back(worker);
        }
        for (auto& t : threads) {
            t.join();
        }
        if (fatal) {
            std::rethrow_exception(fatal);
        }
    }

    std::vector<Json> rows;
    for (const auto& [id, row] : verdicts) {
        if (row.at("status") == "ok") {
            rows.push_back(row.at("record"));
        } else {
            ++summary.skipped_verdicts;
        }
    }
    write_jsonl(dir / "preferences.jsonl", rows);
    summary.records = rows.size();
    return summary;
}

}  // namespace dialogtune::prefgen
