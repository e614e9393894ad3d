// Copyright (c) 2026, dialogtune contributors
// SPDX-License-Identifier: Apache-2.0

#include "judge/judge_client.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "common/hash.hpp"

namespace dialogtune::judge {
namespace {

std::int64_t now_ms() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
}

}  // namespace

Json request_body(const JudgeRequest& request) {
    Json messages = Json::array();
    for (const auto& m : request.messages) {
        messages.push_back({{"role", m.role}, {"content", m.content}});
    }
    Json body{{"model", request.model}, {"messages", std::move(messages)}, {"temperature", request.temperature}};
    if (request.top_logprobs) {
        body["logprobs"] = true;
        body["top_logprobs"] = *request.top_logprobs;
    }
    if (request.max_tokens) {
        body["max_tokens"] = *request.max_tokens;
    }
    return body;
}

JudgeResponse parse_completion(const Json& body) {
    JudgeResponse response;
    try {
        const auto& choice = body.at("choices").at(0);
        const auto& content = choice.at("message").at("content");
        response.text = content.is_null() ? "" : content.get<std::string>();
        if (choice.contains("logprobs") && choice["logprobs"].is_object() &&
            choice["logprobs"].contains("content") && choice["logprobs"]["content"].is_array()) {
            for (const auto& t : choice["logprobs"]["content"]) {
                TokenLogprob token{t.at("token").get<std::string>(), t.at("logprob").get<double>(), {}};
                if (t.contains("top_logprobs") && t["top_logprobs"].is_array()) {
                    for (const auto& top : t["top_logprobs"]) {
                        token.top.push_back({top.at("token").get<std::string>(), top.at("logprob").get<double>()});
                    }
                }
                response.tokens.push_back(std::move(token));
            }
        }
        response.model = body.value("model", "");
        if (body.contains("usage") && body["usage"].is_object()) {
            response.usage.prompt_tokens = body["usage"].value("prompt_tokens", 0L);
            response.usage.completion_tokens = body["usage"].value("completion_tokens", 0L);
        }
    } catch (const Json::exception& e) {
        throw JudgeError(std::string("malformed completion body: ") + e.what(), false);
    }
    return response;
}

Json to_json(const JudgeResponse& response) {
    Json tokens = Json::array();
    for (const auto& t : response.tokens) {
        Json top = Json::array();
        for (const auto& alt : t.top) {
            top.push_back({{"token", alt.token}, {"logprob", alt.logprob}});
        }
        tokens.push_back({{"token", t.token}, {"logprob", t.logprob}, {"top_logprobs", std::move(top)}});
    }
    return Json{{"text", response.text},
                {"tokens", std::move(tokens)},
                {"model", response.model},
                {"usage",
                 {{"prompt_tokens", response.usage.prompt_tokens},
                  {"completion_tokens", response.usage.completion_tokens}}}};
}

JudgeResponse response_from_json(const Json& value) {
    JudgeResponse response;
    response.text = value.at("text").get<std::string>();
    response.model = value.value("model", "");
    for (const auto& t : value.at("tokens")) {
        TokenLogprob token{t.at("token").get<std::string>(), t.at("logprob").get<double>(), {}};
        for (const auto& alt : t.at("top_logprobs")) {
            token.top.push_back({alt.at("token").get<std::string>(), alt.at("logprob").get<double>()});
        }
        response.tokens.push_back(std::move(token));
    }
    response.usage.prompt_tokens = value.at("usage").value("prompt_tokens", 0L);
    response.usage.completion_tokens = value.at("usage").value("completion_tokens", 0L);
    return response;
}

std::string request_fingerprint(const JudgeRequest& request) {
    Sha256 h;
    h.update(request_body(request).dump());
    h.update(std::string_view("\n", 1));
    h.update(request.request_key);
    return h.hex_digest();
}

JudgeRequest single_prompt(const std::string& model, const std::string& prompt, double temperature,
                           std::optional<int> top_logprobs) {
    JudgeRequest request;
    request.model = model;
    request.messages.push_back({"user", prompt});
    request.temperature = temperature;
    request.top_logprobs = top_logprobs;
    return request;
}

// --- retry / rate limit ---------------------------------------------------

RetryingJudge::RetryingJudge(JudgeClient& inner, RetryPolicy policy, Sleeper sleeper)
    : inner_(inner), policy_(policy), sleep_(std::move(sleeper)) {
    require(policy_.max_attempts >= 1, ErrorCode::kConfig, "retry max_attempts must be >= 1");
    if (!sleep_) {
        sleep_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
    }
}

JudgeResponse RetryingJudge::complete(const JudgeRequest& request) {
    auto backoff = policy_.initial_backoff;
    for (int attempt = 1;; ++attempt) {
        if (policy_.min_interval.count() > 0) {
            std::chrono::milliseconds wait{0};
            {
                std::lock_guard lock(mutex_);
                const auto now = std::chrono::steady_clock::now();
                const auto earliest = last_start_ + policy_.min_interval;
                if (now < earliest) {
                    wait = std::chrono::duration_cast<std::chrono::milliseconds>(earliest - now);
                }
                last_start_ = std::max(now, earliest);
            }
            if (wait.count() > 0) {
                sleep_(wait);
            }
        }
        try {
            return inner_.complete(request);
        } catch (const JudgeError& e) {
            if (!e.retryable() || attempt >= policy_.max_attempts) {
                throw JudgeError("judge request failed after " + std::to_string(attempt) +
                                     " attempt(s): " + e.what(),
                                 false);
            }
        }
        sleep_(backoff);
        const auto next = std::chrono::milliseconds(
            static_cast<std::int64_t>(static_cast<double>(backoff.count()) * policy_.backoff_multiplier));
        backoff = std::min(next, policy_.max_backoff);
    }
}

// --- request log ----------------------------------------------------------

LoggedJudge::LoggedJudge(JudgeClient& inner, const std::filesystem::path& log_path)
    : inner_(inner), log_(log_path) {
    if (std::filesystem::exists(log_path)) {
        for (const auto& row : read_jsonl(log_path)) {
            if (row.contains("response") && row.contains("fingerprint")) {
                cache_[row["fingerprint"].get<std::string>()] = response_from_json(row["response"]);
            }
        }
    }
}

JudgeResponse LoggedJudge::complete(const JudgeRequest& request) {
    const std::string fingerprint = request_fingerprint(request);
    {
        std::lock_guard lock(mutex_);
        const auto it = cache_.find(fingerprint);
        if (it != cache_.end()) {
            ++replayed_;
            return it->second;
        }
    }
    const auto started = now_ms();
    Json row{{"fingerprint", fingerprint},
             {"request_key", request.request_key},
             {"request", request_body(request)},
             {"started_ms", started}};
    try {
        JudgeResponse response = inner_.complete(request);
        row["finished_ms"] = now_ms();
        row["response"] = to_json(response);
        log_.append(row);
        std::lock_guard lock(mutex_);
        ++forwarded_;
        cache_.emplace(fingerprint, response);
        return response;
    } catch (const JudgeError& e) {
        row["finished_ms"] = now_ms();
        row["error"] = e.what();
        log_.append(row);
        throw;
    }
}

std::size_t LoggedJudge::replayed() const {
    std::lock_guard lock(mutex_);
    return replayed_;
}

std::size_t LoggedJudge::forwarded() const {
    std::lock_guard lock(mutex_);
    return forwarded_;
}

// --- stack ----------------------------------------------------------------

JudgeStack::JudgeStack(const JudgeSettings& settings, const std::filesystem::path& log_path) {
    if (settings.provider == "offline") {
        provider_ = std::make_unique<OfflineJudge>("offline:" + settings.http.model);
    } else if (settings.provider == "openai") {
        provider_ = std::make_unique<HttpJudgeClient>(settings.http);
    } else {
        fail(ErrorCode::kConfig, "unknown judge provider '" + settings.provider + "' (expected offline|openai)");
    }
    retrying_ = std::make_unique<RetryingJudge>(*provider_, settings.retry);
    logged_ = std::make_unique<LoggedJudge>(*retrying_, log_path);
}

}  // namespace dialogtune::judge
