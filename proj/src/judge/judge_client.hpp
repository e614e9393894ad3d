// Copyright (c) 2026, dialogtune contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "common/error.hpp"
#include "common/jsonl.hpp"

namespace dialogtune::judge {

struct ChatMessage {
    std::string role;
    std::string content;
};

struct JudgeRequest {
    std::string model;
    std::vector<ChatMessage> messages;
    double temperature = 0.0;
    std::optional<int> top_logprobs;
    std::optional<int> max_tokens;
    /// Caller-chosen idempotency key; two requests with the same body and
    /// key are the same request.
    std::string request_key;
};

struct TopLogprob {
    std::string token;
    double logprob = 0.0;
};

struct TokenLogprob {
    std::string token;
    double logprob = 0.0;
    std::vector<TopLogprob> top;
};

struct Usage {
    long prompt_tokens = 0;
    long completion_tokens = 0;
};

struct JudgeResponse {
    std::string text;
    std::vector<TokenLogprob> tokens;  // empty unless logprobs were requested
    std::string model;
    Usage usage;
};

/// Judge failure. Retryable failures (rate limits, 5xx, transport) are
/// retried by RetryingJudge; others surface immediately.
class JudgeError : public Error {
public:
    JudgeError(const std::string& message, bool retryable)
        : Error(ErrorCode::kJudge, message), retryable_(retryable) {}
    bool retryable() const noexcept { return retryable_; }

private:
    bool retryable_;
};

class JudgeClient {
public:
    virtual ~JudgeClient() = default;
    virtual JudgeResponse complete(const JudgeRequest& request) = 0;
    virtual std::string model_id() const = 0;
};

/// OpenAI-compatible chat-completions body.
Json request_body(const JudgeRequest& request);
JudgeResponse parse_completion(const Json& body);
Json to_json(const JudgeResponse& response);
JudgeResponse response_from_json(const Json& value);

/// sha256 over the canonical body and the caller key.
std::string request_fingerprint(const JudgeRequest& request);

JudgeRequest single_prompt(const std::string& model, const std::string& prompt, double temperature,
                           std::optional<int> top_logprobs = std::nullopt);

struct HttpJudgeConfig {
    std::string base_url = "https://api.openai.com/v1";
    std::string model = "gpt-4o";
    std::string api_key_env = "OPENAI_API_KEY";
    int timeout_seconds = 60;
};

/// POSTs to <base_url>/chat/completions with a bearer token read from the
/// environment variable named in the config.
class HttpJudgeClient final : public JudgeClient {
public:
    explicit HttpJudgeClient(HttpJudgeConfig config);
    JudgeResponse complete(const JudgeRequest& request) override;
    std::string model_id() const override { return config_.model; }

private:
    HttpJudgeConfig config_;
    std::string origin_;
    std::string path_;
};

struct RetryPolicy {
    int max_attempts = 4;
    std::chrono::milliseconds initial_backoff{500};
    double backoff_multiplier = 2.0;
    std::chrono::milliseconds max_backoff{30000};
    /// Minimum spacing between request starts; zero disables rate limiting.
    std::chrono::milliseconds min_interval{0};
};

class RetryingJudge final : public JudgeClient {
public:
    using Sleeper = std::function<void(std::chrono::milliseconds)>;

    RetryingJudge(JudgeClient& inner, RetryPolicy policy, Sleeper sleeper = {});
    JudgeResponse complete(const JudgeRequest& request) override;
    std::string model_id() const override { return inner_.model_id(); }

private:
    JudgeClient& inner_;
    RetryPolicy policy_;
    Sleeper sleep_;
    std::mutex mutex_;
    std::chrono::steady_clock::time_point last_start_{};
};

/// Append-only audit log of every request/response with timestamps. A
/// request whose fingerprint is already logged is answered from the log.
class LoggedJudge final : public JudgeClient {
public:
    LoggedJudge(JudgeClient& inner, const std::filesystem::path& log_path);
    JudgeResponse complete(const JudgeRequest& request) override;
    std::string model_id() const override { return inner_.model_id(); }

    std::size_t replayed() const;
    std::size_t forwarded() const;

private:
    JudgeClient& inner_;
    JsonlAppender log_;
    mutable std::mutex mutex_;
    std::map<std::string, JudgeResponse> cache_;
    std::size_t replayed_ = 0;
    std::size_t forwarded_ = 0;
};

/// Deterministic offline judge for fixture runs. Recognizes the prompt
/// generation, pairwise preference, and criterion scoring requests built
/// by this library and answers each plausibly: numbered dialogue lines, a
/// content-based (position-agnostic) verdict, and a score with top-5
/// log-probabilities.
class OfflineJudge final : public JudgeClient {
public:
    explicit OfflineJudge(std::string model = "offline-judge") : model_(std::move(model)) {}
    JudgeResponse complete(const JudgeRequest& request) override;
    std::string model_id() const override { return model_; }

private:
    std::string model_;
};

struct JudgeSettings {
    std::string provider = "offline";  // offline | openai
    HttpJudgeConfig http;
    RetryPolicy retry;
};

/// Builds the configured client stack: provider, retry, request log.
class JudgeStack {
public:
    JudgeStack(const JudgeSettings& settings, const std::filesystem::path& log_path);
    JudgeClient& client() { return *logged_; }

private:
    std::unique_ptr<JudgeClient> provider_;
    std::unique_ptr<RetryingJudge> retrying_;
    std::unique_ptr<LoggedJudge> logged_;
};

}  // namespace dialogtune::judge
