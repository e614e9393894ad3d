// Copyright (c) 2026, dialogtune contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "common/error.hpp"
#include "common/jsonl.hpp"
#include "common/rng.hpp"
#include "corpus/corpus.hpp"
#include "dataset/tokenizer.hpp"

namespace dialogtune::dataset {

inline constexpr std::size_t kDefaultMaxSequenceLength = 512;

struct DialoguePair {
    std::string prompt_text;
    std::string response_text;
    std::size_t conversation_index = 0;
    std::size_t window_index = 0;

    bool operator==(const DialoguePair&) const = default;
};

/// Role markers default to the Qwen chat format.
struct ChatTemplate {
    std::string role_open_marker = "<|im_start|>";
    std::string role_close_marker = "<|im_end|>";
    std::string system_role = "system";
    std::string user_role = "user";
    std::string assistant_role = "assistant";
    std::string end_of_text_marker = "<|endoftext|>";
};

enum class Role { kSystem, kUser, kAssistant };

struct ChatTurn {
    Role role;
    std::string text;
};

struct TokenizedExample {
    std::int64_t example_id = 0;
    std::vector<TokenId> token_ids;
    std::size_t length = 0;
    bool truncated = false;
    /// First token trained on; earlier tokens are label-masked prompt.
    std::size_t label_start = 0;
};

struct Segment {
    std::size_t start = 0;
    std::size_t end = 0;  // exclusive

    bool operator==(const Segment&) const = default;
};

struct PackedExample {
    std::vector<std::int64_t> member_ids;
    std::vector<TokenId> token_ids;
    std::vector<Segment> segment_boundaries;
    std::vector<std::uint8_t> label_mask;  // 1 where the token is a training target
};

struct SplitSpec {
    double test_fraction = 0.20;
    double validation_fraction_of_train = 0.20;
    std::uint64_t seed = 0;
};

template <typename T>
struct SplitResult {
    std::vector<T> train;
    std::vector<T> validation;
    std::vector<T> test;
};

/// Sliding window over adjacent utterances: n utterances give n-1 pairs.
std::vector<DialoguePair> make_pairs(const corpus::ResolvedConversation& conversation);

struct PairFilterStats {
    std::size_t kept = 0;
    std::size_t dropped_empty = 0;
};

/// Drops pairs whose prompt or response is empty after whitespace trim.
std::vector<DialoguePair> drop_empty_pairs(std::vector<DialoguePair> pairs, PairFilterStats* stats = nullptr);

std::string render(const DialoguePair& pair, const ChatTemplate& chat_template,
                   const std::optional<std::string>& system_prompt = std::nullopt);

/// Everything up to and including the opened assistant block; the text the
/// model is conditioned on.
std::string render_prompt(const std::string& prompt_text, const ChatTemplate& chat_template,
                          const std::optional<std::string>& system_prompt = std::nullopt);

/// Renders a multi-turn history and opens a fresh assistant block.
std::string render_history(const std::vector<ChatTurn>& turns, const ChatTemplate& chat_template);

TokenizedExample tokenize_and_truncate(const std::string& text, const Tokenizer& tokenizer,
                                       std::size_t max_len = kDefaultMaxSequenceLength);

/// Renders and tokenizes a pair, recording where the response tokens start.
TokenizedExample tokenize_pair(const DialoguePair& pair, std::int64_t example_id, const Tokenizer& tokenizer,
                               const ChatTemplate& chat_template, std::size_t max_len = kDefaultMaxSequenceLength,
                               const std::optional<std::string>& system_prompt = std::nullopt);

/// First-fit in the given order.
std::vector<PackedExample> pack_in_order(const std::vector<TokenizedExample>& examples, std::size_t max_len);

/// First-fit over a seed-shuffled order.
std::vector<PackedExample> pack(const std::vector<TokenizedExample>& examples, std::size_t max_len,
                                std::uint64_t seed);

void validate(const SplitSpec& spec);

struct SplitSizes {
    std::size_t train = 0;
    std::size_t validation = 0;
    std::size_t test = 0;
};

SplitSizes split_sizes(std::size_t total, const SplitSpec& spec);

template <typename T>
SplitResult<T> split(const std::vector<T>& items, const SplitSpec& spec) {
    validate(spec);
    require(items.size() >= 3, ErrorCode::kInvalidArgument, "split needs at least 3 items");
    std::vector<std::size_t> order(items.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(spec.seed);
    rng.shuffle(std::span<std::size_t>(order));

    const SplitSizes sizes = split_sizes(items.size(), spec);
    SplitResult<T> result;
    std::size_t cursor = 0;
    for (; cursor < sizes.test; ++cursor) {
        result.test.push_back(items[order[cursor]]);
    }
    for (std::size_t i = 0; i < sizes.validation; ++i, ++cursor) {
        result.validation.push_back(items[order[cursor]]);
    }
    for (; cursor < order.size(); ++cursor) {
        result.train.push_back(items[order[cursor]]);
    }
    return result;
}

Json to_json(const DialoguePair& pair);
DialoguePair pair_from_json(const Json& row);
Json to_json(const PackedExample& packed);
PackedExample packed_from_json(const Json& row);

}  // namespace dialogtune::dataset
