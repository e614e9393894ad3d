// Copyright (c) 2026, dialogtune contributors
// SPDX-License-Identifier: Apache-2.0

#include "eval/geval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <set>
#include <thread>

#include "common/error.hpp"
#include "prompts/prompt_data.hpp"

namespace dialogtune::eval {
namespace {

const char* display_name(Criterion c) {
    switch (c) {
        case Criterion::kCoherence: return "Coherence";
        case Criterion::kConsistency: return "Consistency";
        case Criterion::kFluency: return "Fluency";
        case Criterion::kRelevance: return "Relevance";
    }
    return "";
}

// Sampled text fallback: the first standalone digit 1..5.
std::optional<int> first_score_in_text(const std::string& text) {
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (c < '1' || c > '5') {
            continue;
        }
        const bool left_ok = i == 0 || !std::isdigit(static_cast<unsigned char>(text[i - 1]));
        const bool right_ok = i + 1 == text.size() || !std::isdigit(static_cast<unsigned char>(text[i + 1]));
        if (left_ok && right_ok) {
            return c - '0';
        }
    }
    return std::nullopt;
}

}  // namespace

const char* to_string(Criterion criterion) {
    switch (criterion) {
        case Criterion::kCoherence: return "coherence";
        case Criterion::kConsistency: return "consistency";
        case Criterion::kFluency: return "fluency";
        case Criterion::kRelevance: return "relevance";
    }
    return "";
}

std::optional<Criterion> parse_criterion(std::string_view name) {
    for (auto c : kAllCriteria) {
        if (name == to_string(c)) {
            return c;
        }
    }
    return std::nullopt;
}

std::vector<CriterionPrompt> default_criteria() {
    return {{Criterion::kCoherence, prompts::kCoherence},
            {Criterion::kConsistency, prompts::kConsistency},
            {Criterion::kFluency, prompts::kFluency},
            {Criterion::kRelevance, prompts::kRelevance}};
}

std::string render(const CriterionPrompt& prompt, const std::string& dialogue_line, const std::string& response) {
    require(!prompt.rubric.empty(), ErrorCode::kConfig,
            std::string("empty rubric for criterion ") + to_string(prompt.criterion));
    return prompt.rubric + "\n\nDialogue Line:\n" + dialogue_line + "\n\nAI Response:\n" + response +
           "\n\nEvaluation Form (scores ONLY):\n- " + display_name(prompt.criterion) + " (1-5):";
}

std::optional<int> score_token(std::string_view token) {
    const auto b = token.find_first_not_of(" \t\n");
    if (b == std::string_view::npos) {
        return std::nullopt;
    }
    const auto e = token.find_last_not_of(" \t\n");
    token = token.substr(b, e - b + 1);
    if (token.size() == 1 && token[0] >= '1' && token[0] <= '5') {
        return token[0] - '0';
    }
    return std::nullopt;
}

std::optional<ScoreDistribution> distribution_from_logprobs(std::span<const std::pair<int, double>> entries) {
    constexpr double kNegInf = -std::numeric_limits<double>::infinity();
    std::array<double, 5> merged;
    merged.fill(kNegInf);
    bool any = false;
    for (const auto& [score, logprob] : entries) {
        if (score < 1 || score > 5 || !std::isfinite(logprob)) {
            continue;
        }
        double& slot = merged[static_cast<std::size_t>(score - 1)];
        if (slot == kNegInf) {
            slot = logprob;
        } else {
            const double hi = std::max(slot, logprob);
            slot = hi + std::log(std::exp(slot - hi) + std::exp(logprob - hi));
        }
        any = true;
    }
    if (!any) {
        return std::nullopt;
    }
    const double mx = *std::max_element(merged.begin(), merged.end());
    double z = 0.0;
    for (double lp : merged) {
        z += lp == kNegInf ? 0.0 : std::exp(lp - mx);
    }
    ScoreDistribution dist{};
    for (std::size_t i = 0; i < 5; ++i) {
        dist[i] = merged[i] == kNegInf ? 0.0 : std::exp(merged[i] - mx) / z;
    }
    return dist;
}

double weighted_score(const ScoreDistribution& distribution) {
    double s = 0.0;
    for (std::size_t i = 0; i < 5; ++i) {
        s += static_cast<double>(i + 1) * distribution[i];
    }
    return s;
}

const char* to_string(ScoreStatus status) {
    switch (status) {
        case ScoreStatus::kOk: return "ok";
        case ScoreStatus::kFallback: return "fallback";
        case ScoreStatus::kInvalid: return "invalid";
    }
    return "";
}

GevalResult score_response(const CriterionPrompt& criterion, const std::string& dialogue_line,
                           const std::string& response, judge::JudgeClient& judge, int top_logprobs,
                           const std::string& request_key) {
    require(top_logprobs >= 5, ErrorCode::kConfig, "scoring needs top_logprobs >= 5");
    GevalResult result;
    result.criterion = criterion.criterion;
    result.judge_model_id = judge.model_id();
    const std::string prompt = render(criterion, dialogue_line, response);

    for (int attempt = 0; attempt < 2; ++attempt) {
        auto request = judge::single_prompt(
            judge.model_id(), attempt == 0 ? prompt : prompt + "\nRespond with a single digit from 1 to 5.", 0.0,
            top_logprobs);
        request.max_tokens = 5;
        request.request_key = request_key + "/" + std::to_string(attempt);
        const judge::JudgeResponse reply = judge.complete(request);
        result.usage.prompt_tokens += reply.usage.prompt_tokens;
        result.usage.completion_tokens += reply.usage.completion_tokens;
        result.judge_text = reply.text;
        if (!reply.model.empty()) {
            result.judge_model_id = reply.model;
        }

        std::optional<int> sampled;
        for (const auto& token : reply.tokens) {
            sampled = score_token(token.token);
            if (!sampled) {
                continue;
            }
            std::vector<std::pair<int, double>> entries;
            for (const auto& alt : token.top) {
                if (const auto s = score_token(alt.token)) {
                    entries.emplace_back(*s, alt.logprob);
                }
            }
            if (const auto dist = distribution_from_logprobs(entries)) {
                result.distribution = *dist;
                result.status = ScoreStatus::kOk;
                result.weighted_score = weighted_score(*dist);
                result.normalized_score = normalized_score(result.weighted_score);
                return result;
            }
            break;
        }
        if (!sampled) {
            sampled = first_score_in_text(reply.text);
        }
        if (sampled) {
            result.distribution = {};
            result.distribution[static_cast<std::size_t>(*sampled - 1)] = 1.0;
            result.status = ScoreStatus::kFallback;
            result.weighted_score = static_cast<double>(*sampled);
            result.normalized_score = normalized_score(result.weighted_score);
            return result;
        }
    }
    result.status = ScoreStatus::kInvalid;
    result.distribution = {};
    result.weighted_score = 0.0;
    result.normalized_score = 0.0;
    return result;
}

std::string result_key(std::int64_t prompt_id, ModelVariant variant, Criterion criterion) {
    return std::to_string(prompt_id) + "/" + to_string(variant) + "/" + to_string(criterion);
}

Json to_json(const GevalResult& r) {
    return Json{{"prompt_id", r.prompt_id},
                {"model_variant", to_string(r.variant)},
                {"criterion", to_string(r.criterion)},
                {"distribution", r.distribution},
                {"weighted_score", r.weighted_score},
                {"normalized_score", r.normalized_score},
                {"status", to_string(r.status)},
                {"judge_model_id", r.judge_model_id},
                {"judge_text", r.judge_text},
                {"prompt_tokens", r.usage.prompt_tokens},
                {"completion_tokens", r.usage.completion_tokens}};
}

GevalResult geval_result_from_json(const Json& row) {
    GevalResult r;
    r.prompt_id = row.at("prompt_id").get<std::int64_t>();
    const auto variant = parse_variant(row.at("model_variant").get<std::string>());
    const auto criterion = parse_criterion(row.at("criterion").get<std::string>());
    require(variant.has_value() && criterion.has_value(), ErrorCode::kInvalidArgument,
            "unknown variant or criterion in result row");
    r.variant = *variant;
    r.criterion = *criterion;
    r.distribution = row.at("distribution").get<ScoreDistribution>();
    r.weighted_score = row.at("weighted_score").get<double>();
    r.normalized_score = row.at("normalized_score").get<double>();
    const std::string status = row.at("status").get<std::string>();
    r.status = status == "ok" ? ScoreStatus::kOk : status == "fallback" ? ScoreStatus::kFallback : ScoreStatus::kInvalid;
    r.judge_model_id = row.value("judge_model_id", "");
    r.judge_text = row.value("judge_text", "");
    r.usage.prompt_tokens = row.value("prompt_tokens", 0L);
    r.usage.completion_tokens = row.value("completion_tokens", 0L);
    return r;
}

GevalRunSummary run_geval(const std::vector<EvalItem>& items, const std::vector<CriterionPrompt>& criteria,
                          judge::JudgeClient& judge, const std::filesystem::path& results_path,
                          const GevalRunOptions& options) {
    require(options.concurrency >= 1, ErrorCode::kConfig, "geval concurrency must be >= 1");
    GevalRunSummary summary;
    std::map<std::string, GevalResult> done;
    if (std::filesystem::exists(results_path)) {
        for (const auto& row : read_jsonl(results_path)) {
            auto r = geval_result_from_json(row);
            done.emplace(result_key(r.prompt_id, r.variant, r.criterion), std::move(r));
        }
    }

    struct Task {
        const EvalItem* item;
        const CriterionPrompt* criterion;
        std::string key;
    };
    std::vector<Task> tasks;
    std::set<std::string> wanted;
    for (const auto& item : items) {
        for (const auto& c : criteria) {
            std::string key = result_key(item.prompt_id, item.variant, c.criterion);
            if (!wanted.insert(key).second) {
                continue;
            }
            if (done.count(key) != 0) {
                ++summary.reused;
            } else {
                tasks.push_back({&item, &c, std::move(key)});
            }
        }
    }

    JsonlAppender out(results_path);
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
            if (i >= tasks.size()) {
                return;
            }
            const Task& task = tasks[i];
            try {
                GevalResult r = score_response(*task.criterion, task.item->dialogue_line, task.item->response, judge,
                                               options.top_logprobs, "geval/" + task.key);
                r.prompt_id = task.item->prompt_id;
                r.variant = task.item->variant;
                out.append(to_json(r));
                std::lock_guard lock(mutex);
                auto& u = summary.usage[to_string(r.criterion)];
                ++u.requests;
                u.prompt_tokens += r.usage.prompt_tokens;
                u.completion_tokens += r.usage.completion_tokens;
                u.cost += static_cast<double>(r.usage.prompt_tokens) / 1000.0 * options.cost_per_1k_prompt_tokens +
                          static_cast<double>(r.usage.completion_tokens) / 1000.0 * options.cost_per_1k_completion_tokens;
                if (r.status == ScoreStatus::kInvalid) {
                    summary.diagnostics.push_back(task.key + ": no parsable score after reprompt");
                }
                ++summary.newly_scored;
                done.emplace(task.key, std::move(r));
            } catch (const judge::JudgeError& e) {
                std::lock_guard lock(mutex);
                ++summary.failed;
                summary.diagnostics.push_back(task.key + ": " + e.what());
            } catch (...) {
                std::lock_guard lock(mutex);
                if (!fatal) {
                    fatal = std::current_exception();
                }
            }
        }
    };
    std::vector<std::thread> threads;
    const auto workers = std::min<std::size_t>(static_cast<std::size_t>(options.concurrency), tasks.size());
    for (std::size_t t = 0; t < workers; ++t) {
        threads.emplace_back(worker);
    }
    for (auto& t : threads) {
        t.join();
    }
    if (fatal) {
        std::rethrow_exception(fatal);
    }
    for (auto& [key, r] : done) {
        if (wanted.count(key) != 0) {
            summary.results.push_back(r);
        }
    }
    return summary;
}

}  // namespace dialogtune::eval
