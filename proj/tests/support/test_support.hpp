// Copyright (c) 2026, dialogtune contributors
// SPDX-License-Identifier: Apache-2.0

// Shared fixtures for the unit and acceptance tests: temp dirs, scripted
// judges, a mock generator and small synthetic training sets.

#pragma once

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <mutex>
#include <string>
#include <vector>

#include "common/rng.hpp"
#include "dataset/dataset.hpp"
#include "dataset/tokenizer.hpp"
#include "judge/judge_client.hpp"
#include "serve/generator.hpp"
#include "train/backend.hpp"
#include "train/config.hpp"
#include "train/orchestrator.hpp"

namespace dt_test {

namespace fs = std::filesystem;
using namespace dialogtune;

inline fs::path source_dir() { return fs::path(DIALOGTUNE_SOURCE_DIR); }
inline fs::path fixture(const std::string& name) { return source_dir() / "data" / "fixtures" / name; }

class TempDir {
public:
    explicit TempDir(const std::string& tag = "dt") {
        std::string pattern = (fs::temp_directory_path() / (tag + "-XXXXXX")).string();
        char* made = ::mkdtemp(pattern.data());
        if (made == nullptr) {
            throw std::runtime_error("mkdtemp failed");
        }
        path_ = made;
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

/// Judge whose answers come from a callback. Thread-safe call counter.
class ScriptedJudge final : public judge::JudgeClient {
public:
    using Script = std::function<judge::JudgeResponse(const judge::JudgeRequest&, std::size_t call)>;
    explicit ScriptedJudge(Script script, std::string model = "scripted-judge")
        : script_(std::move(script)), model_(std::move(model)) {}
    judge::JudgeResponse complete(const judge::JudgeRequest& request) override {
        const std::size_t call = calls_.fetch_add(1);
        auto response = script_(request, call);
        if (response.model.empty()) {
            response.model = model_;
        }
        return response;
    }
    std::string model_id() const override { return model_; }
    std::size_t calls() const { return calls_.load(); }

private:
    Script script_;
    std::string model_;
    std::atomic<std::size_t> calls_{0};
};

inline judge::JudgeResponse text_response(std::string text) {
    judge::JudgeResponse r;
    r.text = std::move(text);
    r.usage = {100, 1};
    return r;
}

/// A one-token score answer whose top-k carries the given (token, logprob).
inline judge::JudgeResponse score_answer(const std::string& sampled,
                                         const std::vector<std::pair<std::string, double>>& top) {
    judge::JudgeResponse r = text_response(sampled);
    judge::TokenLogprob tok{sampled, 0.0, {}};
    for (const auto& [t, lp] : top) {
        tok.top.push_back({t, lp});
        if (t == sampled) {
            tok.logprob = lp;
        }
    }
    r.tokens.push_back(tok);
    return r;
}

inline const std::string& user_text(const judge::JudgeRequest& request) { return request.messages.back().content; }

/// Deterministic stand-in for a model: text and length depend only on the
/// seed, truncated to max_new_tokens (one token per word).
class MockGenerator final : public serve::ResponseGenerator {
public:
    explicit MockGenerator(std::string tag = "mock", std::size_t natural_tokens = 200)
        : tag_(std::move(tag)), natural_(natural_tokens) {}
    serve::Generation generate(const std::vector<dataset::ChatTurn>& history, const serve::GenerationParams& params,
                               std::uint64_t seed, serve::Deadline) override {
        serve::validate(params);
        {
            std::lock_guard lock(mutex_);
            last_history_ = history;
            last_params_ = params;
        }
        calls_.fetch_add(1);
        Rng rng(seed);
        const std::size_t n = std::min<std::size_t>(natural_, static_cast<std::size_t>(params.max_new_tokens));
        std::string text;
        for (std::size_t i = 0; i < n; ++i) {
            text += (i == 0 ? "" : " ") + tag_ + std::to_string(rng.below(1000));
        }
        return {text, n};
    }
    std::size_t calls() const { return calls_.load(); }
    serve::GenerationParams last_params() const {
        std::lock_guard lock(mutex_);
        return last_params_;
    }

private:
    std::string tag_;
    std::size_t natural_;
    std::atomic<std::size_t> calls_{0};
    mutable std::mutex mutex_;
    std::vector<dataset::ChatTurn> last_history_;
    serve::GenerationParams last_params_;
};

/// Prompt/response pairs with a learnable mapping from prompt to reply.
inline std::vector<dataset::DialoguePair> synthetic_pairs(std::size_t n, std::uint64_t seed) {
    static const std::vector<std::string> things = {"key", "car", "map", "gun", "ring", "book", "coat", "money"};
    static const std::vector<std::string> places = {"in the car", "at home", "on the table", "with me",
                                                    "under the bed", "in the safe", "at the bar", "out back"};
    Rng rng(seed);
    std::vector<dataset::DialoguePair> out;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t t = rng.below(things.size());
        dataset::DialoguePair p;
        p.prompt_text = "where is the " + things[t] + "?";
        p.response_text = "the " + things[t] + " is " + places[t] + ".";
        p.conversation_index = i;
        out.push_back(p);
    }
    return out;
}

inline std::vector<train::TrainingSequence> to_sequences(const std::vector<dataset::DialoguePair>& pairs,
                                                         const dataset::Tokenizer& tokenizer,
                                                         std::size_t max_len = 128) {
    std::vector<train::TrainingSequence> out;
    for (const auto& p : pairs) {
        out.push_back(train::sequence_for_pair(p.prompt_text, p.response_text, tokenizer, {}, max_len));
    }
    return out;
}

/// Chosen is the mapped reply, rejected a fixed wrong one.
inline std::vector<train::PreferenceExample> synthetic_preferences(std::size_t n, std::uint64_t seed,
                                                                  const dataset::Tokenizer& tokenizer) {
    std::vector<train::PreferenceExample> out;
    for (const auto& p : synthetic_pairs(n, seed)) {
        out.push_back({train::sequence_for_pair(p.prompt_text, p.response_text, tokenizer, {}, 128),
                       train::sequence_for_pair(p.prompt_text, "zzz qqq xxx.", tokenizer, {}, 128)});
    }
    return out;
}

/// Small, fast training config for tests.
inline train::TrainConfig toy_config(const std::string& model = "toy-16x32") {
    train::TrainConfig c;
    c.base_model_id = model;
    c.weight_precision = train::WeightPrecision::kThirtyTwoBit;
    c.lora.rank = 4;
    c.lora.alpha = 8.0;
    c.neftune.noise_alpha = 0.0;
    c.accumulation = {4, 2};
    c.max_sequence_length = 128;
    c.seed = 11;
    c.optimizer.learning_rate = 2e-2;
    c.max_steps = 100;
    c.eval_every = 50;
    c.checkpoint_every = 50;
    return c;
}

}  // namespace dt_test
