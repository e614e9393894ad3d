// Copyright (c) 2026, dialogtune contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "common/jsonl.hpp"

namespace dialogtune::corpus {

inline constexpr std::string_view kFieldSeparator = " +++$+++ ";

struct UtteranceRecord {
    std::string line_id;
    std::string character_id;
    std::string movie_id;
    std::string character_name;
    std::string text;  // UTF-8

    bool operator==(const UtteranceRecord&) const = default;
};

struct ConversationRecord {
    std::string movie_id;
    std::string first_character_id;
    std::string second_character_id;
    std::vector<std::string> line_ids;

    bool operator==(const ConversationRecord&) const = default;
};

struct ResolvedConversation {
    std::size_t conversation_index = 0;
    std::vector<UtteranceRecord> utterances;
};

struct Diagnostic {
    std::size_t line_number = 0;  // 1-based
    std::string reason;
};

struct DroppedConversation {
    std::size_t conversation_index = 0;
    std::vector<std::string> missing_line_ids;
};

enum class FallbackDecoder { kNone, kLatin1 };

/// Strict UTF-8 first; if the file fails validation, the whole file is
/// re-decoded with the fallback. Latin-1 maps every byte to one code point.
struct DecoderPolicy {
    FallbackDecoder fallback = FallbackDecoder::kLatin1;
};

struct DecodedText {
    std::string utf8;
    bool used_fallback = false;
};

DecodedText decode(std::string_view bytes, const DecoderPolicy& policy);
bool is_valid_utf8(std::string_view bytes);

struct UtteranceParse {
    std::vector<UtteranceRecord> records;
    std::vector<Diagnostic> diagnostics;
    bool used_fallback_decoder = false;
};

struct ConversationParse {
    std::vector<ConversationRecord> records;
    std::vector<Diagnostic> diagnostics;
};

struct Resolution {
    std::vector<ResolvedConversation> conversations;
    std::vector<DroppedConversation> dropped;
};

/// Throws Error(kCorpus) on a duplicate line_id or on bytes that cannot be
/// decoded under the policy.
UtteranceParse parse_utterances(std::string_view bytes, const DecoderPolicy& policy = {});

ConversationParse parse_conversations(std::string_view bytes, const DecoderPolicy& policy = {});

/// Parses a list literal such as ['L1', 'L2']; returns false on malformed input.
bool parse_line_id_list(std::string_view literal, std::vector<std::string>& out);

Resolution resolve(const std::vector<ConversationRecord>& conversations,
                   const std::vector<UtteranceRecord>& lines);

Json to_json(const UtteranceRecord& record);
Json to_json(const ResolvedConversation& conversation);
Json to_json(const Diagnostic& diagnostic);
Json to_json(const DroppedConversation& dropped);
ResolvedConversation resolved_from_json(const Json& row);

}  // namespace dialogtune::corpus
