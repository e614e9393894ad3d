// Copyright (c) 2026, dialogtune contributors
// SPDX-License-Identifier: Apache-2.0

#include "dataset/dataset.hpp"

#include <algorithm>
#include <cctype>

namespace dialogtune::dataset {
namespace {

bool blank(const std::string& s) {
    return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c) != 0; });
}

void append_block(std::string& out, const ChatTemplate& t, const std::string& role, const std::string& text) {
    out += t.role_open_marker;
    out += role;
    out += '\n';
    out += text;
    out += t.role_close_marker;
    out += '\n';
}

const std::string& role_name(const ChatTemplate& t, Role role) {
    switch (role) {
        case Role::kSystem: return t.system_role;
        case Role::kUser: return t.user_role;
        case Role::kAssistant: return t.assistant_role;
    }
    return t.user_role;
}

}  // namespace

std::vector<DialoguePair> make_pairs(const corpus::ResolvedConversation& conversation) {
    std::vector<DialoguePair> pairs;
    const auto& u = conversation.utterances;
    if (u.size() < 2) {
        return pairs;
    }
    pairs.reserve(u.size() - 1);
    for (std::size_t k = 0; k + 1 < u.size(); ++k) {
        pairs.push_back({u[k].text, u[k + 1].text, conversation.conversation_index, k});
    }
    return pairs;
}

std::vector<DialoguePair> drop_empty_pairs(std::vector<DialoguePair> pairs, PairFilterStats* stats) {
    const auto before = pairs.size();
    std::erase_if(pairs, [](const DialoguePair& p) { return blank(p.prompt_text) || blank(p.response_text); });
    if (stats != nullptr) {
        stats->kept = pairs.size();
        stats->dropped_empty = before - pairs.size();
    }
    return pairs;
}

std::string render_prompt(const std::string& prompt_text, const ChatTemplate& chat_template,
                          const std::optional<std::string>& system_prompt) {
    std::string out;
    if (system_prompt && !system_prompt->empty()) {
        append_block(out, chat_template, chat_template.system_role, *system_prompt);
    }
    append_block(out, chat_template, chat_template.user_role, prompt_text);
    out += chat_template.role_open_marker;
    out += chat_template.assistant_role;
    out += '\n';
    return out;
}

std::string render(const DialoguePair& pair, const ChatTemplate& chat_template,
                   const std::optional<std::string>& system_prompt) {
    std::string out = render_prompt(pair.prompt_text, chat_template, system_prompt);
    out += pair.response_text;
    out += chat_template.role_close_marker;
    out += '\n';
    out += chat_template.end_of_text_marker;
    return out;
}

std::string render_history(const std::vector<ChatTurn>& turns, const ChatTemplate& chat_template) {
    std::string out;
    for (const auto& turn : turns) {
        if (turn.role == Role::kSystem && turn.text.empty()) {
            continue;
        }
        append_block(out, chat_template, role_name(chat_template, turn.role), turn.text);
    }
    out += chat_template.role_open_marker;
    out += chat_template.assistant_role;
    out += '\n';
    return out;
}

TokenizedExample tokenize_and_truncate(const std::string& text, const Tokenizer& tokenizer, std::size_t max_len) {
    require(!text.empty(), ErrorCode::kInvalidArgument, "cannot tokenize empty text");
    require(max_len > 0, ErrorCode::kInvalidArgument, "max_len must be positive");
    TokenizedExample example;
    example.token_ids = tokenizer.encode(text);
    if (example.token_ids.size() > max_len) {
        example.token_ids.resize(max_len);
        example.truncated = true;
    }
    example.length = example.token_ids.size();
    return example;
}

TokenizedExample tokenize_pair(const DialoguePair& pair, std::int64_t example_id, const Tokenizer& tokenizer,
                               const ChatTemplate& chat_template, std::size_t max_len,
                               const std::optional<std::string>& system_prompt) {
    TokenizedExample example = tokenize_and_truncate(render(pair, chat_template, system_prompt), tokenizer, max_len);
    example.example_id = example_id;
    const auto prefix = tokenizer.encode(render_prompt(pair.prompt_text, chat_template, system_prompt));
    example.label_start = std::min(prefix.size(), example.length);
    return example;
}

std::vector<PackedExample> pack_in_order(const std::vector<TokenizedExample>& examples, std::size_t max_len) {
    std::vector<PackedExample> bins;
    for (const auto& example : examples) {
        require(example.length == example.token_ids.size(), ErrorCode::kInvalidArgument,
                "example length disagrees with its token ids");
        if (example.length > max_len) {
            fail(ErrorCode::kInvalidArgument, "example " + std::to_string(example.example_id) + " has length " +
                                                  std::to_string(example.length) + " > max_len " +
                                                  std::to_string(max_len));
        }
        auto bin = std::find_if(bins.begin(), bins.end(), [&](const PackedExample& b) {
            return b.token_ids.size() + example.length <= max_len;
        });
        if (bin == bins.end()) {
            bins.emplace_back();
            bin = std::prev(bins.end());
        }
        const std::size_t start = bin->token_ids.size();
        bin->member_ids.push_back(example.example_id);
        bin->token_ids.insert(bin->token_ids.end(), example.token_ids.begin(), example.token_ids.end());
        bin->segment_boundaries.push_back({start, bin->token_ids.size()});
        for (std::size_t i = 0; i < example.length; ++i) {
            bin->label_mask.push_back(i >= example.label_start ? 1 : 0);
        }
    }
    return bins;
}

std::vector<PackedExample> pack(const std::vector<TokenizedExample>& examples, std::size_t max_len,
                                std::uint64_t seed) {
    std::vector<TokenizedExample> shuffled = examples;
    Rng rng(seed);
    rng.shuffle(std::span<TokenizedExample>(shuffled));
    return pack_in_order(shuffled, max_len);
}

void validate(const SplitSpec& spec) {
    auto in_open_unit = [](double f) { return f > 0.0 && f < 1.0; };
    require(in_open_unit(spec.test_fraction), ErrorCode::kInvalidArgument, "test_fraction must lie in (0, 1)");
    require(in_open_unit(spec.validation_fraction_of_train), ErrorCode::kInvalidArgument,
            "validation_fraction_of_train must lie in (0, 1)");
}

SplitSizes split_sizes(std::size_t total, const SplitSpec& spec) {
    SplitSizes sizes;
    sizes.test = static_cast<std::size_t>(std::lround(static_cast<double>(total) * spec.test_fraction));
    sizes.test = std::clamp<std::size_t>(sizes.test, 1, total - 2);
    const std::size_t rest = total - sizes.test;
    sizes.validation =
        static_cast<std::size_t>(std::lround(static_cast<double>(rest) * spec.validation_fraction_of_train));
    sizes.validation = std::clamp<std::size_t>(sizes.validation, 1, rest - 1);
    sizes.train = rest - sizes.validation;
    return sizes;
}

Json to_json(const DialoguePair& pair) {
    return Json{{"prompt", pair.prompt_text},
                {"response", pair.response_text},
                {"conversation_index", pair.conversation_index},
                {"window_index", pair.window_index}};
}

DialoguePair pair_from_json(const Json& row) {
    return {row.at("prompt").get<std::string>(), row.at("response").get<std::string>(),
            row.at("conversation_index").get<std::size_t>(), row.at("window_index").get<std::size_t>()};
}

Json to_json(const PackedExample& packed) {
    Json segments = Json::array();
    for (const auto& s : packed.segment_boundaries) {
        segments.push_back({s.start, s.end});
    }
    return Json{{"member_ids", packed.member_ids},
                {"token_ids", packed.token_ids},
                {"segment_boundaries", std::move(segments)},
                {"label_mask", packed.label_mask}};
}

PackedExample packed_from_json(const Json& row) {
    PackedExample packed;
    packed.member_ids = row.at("member_ids").get<std::vector<std::int64_t>>();
    packed.token_ids = row.at("token_ids").get<std::vector<TokenId>>();
    for (const auto& s : row.at("segment_boundaries")) {
        packed.segment_boundaries.push_back({s.at(0).get<std::size_t>(), s.at(1).get<std::size_t>()});
    }
    packed.label_mask = row.at("label_mask").get<std::vector<std::uint8_t>>();
    return packed;
}

}  // namespace dialogtune::dataset
