// Copyright (c) 2026, dialogtune contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <cstdint>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "dataset/dataset.hpp"
#include "serve/sampling.hpp"

namespace dialogtune::train {
class ModelBackend;
}

namespace dialogtune::serve {

using Deadline = std::optional<std::chrono::steady_clock::time_point>;

struct Generation {
    std::string text;
    std::size_t token_count = 0;
};

/// Text-in, text-out generation over a chat history. The history must end
/// with a user turn; a system turn, if any, comes first.
class ResponseGenerator {
public:
    virtual ~ResponseGenerator() = default;
    virtual Generation generate(const std::vector<dataset::ChatTurn>& history, const GenerationParams& params,
                                std::uint64_t seed, Deadline deadline = std::nullopt) = 0;
};

/// Wraps a loaded backend. Calls are serialized; the backend is not
/// thread-safe.
class BackendGenerator final : public ResponseGenerator {
public:
    BackendGenerator(train::ModelBackend& backend, dataset::ChatTemplate chat_template = {},
                     std::size_t max_context_tokens = 448);
    Generation generate(const std::vector<dataset::ChatTurn>& history, const GenerationParams& params,
                        std::uint64_t seed, Deadline deadline = std::nullopt) override;

private:
    train::ModelBackend& backend_;
    dataset::ChatTemplate template_;
    std::size_t max_context_;
    std::mutex mutex_;
};

/// Single-turn convenience: optional system prompt plus one user line.
std::vector<dataset::ChatTurn> single_turn(const std::string& user_text,
                                           const std::optional<std::string>& system_prompt = std::nullopt);

}  // namespace dialogtune::serve
