// Copyright (c) 2026, dialogtune contributors
// SPDX-License-Identifier: Apache-2.0

#include "serve/generator.hpp"

#include "common/error.hpp"
#include "train/backend.hpp"

namespace dialogtune::serve {

BackendGenerator::BackendGenerator(train::ModelBackend& backend, dataset::ChatTemplate chat_template,
                                   std::size_t max_context_tokens)
    : backend_(backend), template_(std::move(chat_template)), max_context_(max_context_tokens) {}

Generation BackendGenerator::generate(const std::vector<dataset::ChatTurn>& history, const GenerationParams& params,
                                      std::uint64_t seed, Deadline deadline) {
    validate(params);
    require(!history.empty() && history.back().role == dataset::Role::kUser, ErrorCode::kInvalidArgument,
            "generation history must end with a user turn");
    std::lock_guard lock(mutex_);
    require(backend_.loaded(), ErrorCode::kBackend, "backend is not loaded");
    const auto& tokenizer = backend_.tokenizer();
    std::vector<dataset::TokenId> prompt = tokenizer.encode(dataset::render_history(history, template_));
    if (prompt.size() > max_context_) {
        // Keep the most recent context; the opened assistant block is at the end.
        prompt.erase(prompt.begin(), prompt.end() - static_cast<std::ptrdiff_t>(max_context_));
    }
    backend_.set_mode(train::Mode::kEval);
    const auto tokens = backend_.sample(prompt, params, seed, deadline);
    return {tokenizer.decode(tokens), tokens.size()};
}

std::vector<dataset::ChatTurn> single_turn(const std::string& user_text, const std::optional<std::string>& system_prompt) {
    std::vector<dataset::ChatTurn> turns;
    if (system_prompt) {
        turns.push_back({dataset::Role::kSystem, *system_prompt});
    }
    turns.push_back({dataset::Role::kUser, user_text});
    return turns;
}

}  // namespace dialogtune::serve
