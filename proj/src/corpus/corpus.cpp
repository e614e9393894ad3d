// Copyright (c) 2026, dialogtune contributors
// SPDX-License-Identifier: Apache-2.0

#include "corpus/corpus.hpp"

#include <unordered_map>

#include "common/error.hpp"

namespace dialogtune::corpus {
namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(kFieldSeparator, start);
        if (pos == std::string_view::npos) {
            fields.push_back(line.substr(start));
            break;
        }
        fields.push_back(line.substr(start, pos - start));
        start = pos + kFieldSeparator.size();
    }
    return fields;
}

// Calls fn(line_number, line) for every line with the trailing CR removed.
template <typename Fn>
void for_each_line(std::string_view text, Fn&& fn) {
    std::size_t line_number = 0;
    std::size_t start = 0;
    while (start < text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string_view::npos) {
            end = text.size();
        }
        std::string_view line = text.substr(start, end - start);
        if (!line.empty() && line.back() == '\r') {
            line.remove_suffix(1);
        }
        fn(++line_number, line);
        start = end + 1;
    }
}

void append_codepoint(std::string& out, unsigned cp) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

}  // namespace

bool is_valid_utf8(std::string_view bytes) {
    std::size_t i = 0;
    const std::size_t n = bytes.size();
    while (i < n) {
        const auto c = static_cast<unsigned char>(bytes[i]);
        std::size_t extra = 0;
        unsigned cp = 0;
        if (c < 0x80) {
            ++i;
            continue;
        } else if ((c & 0xE0) == 0xC0) {
            extra = 1;
            cp = c & 0x1F;
        } else if ((c & 0xF0) == 0xE0) {
            extra = 2;
            cp = c & 0x0F;
        } else if ((c & 0xF8) == 0xF0) {
            extra = 3;
            cp = c & 0x07;
        } else {
            return false;
        }
        if (i + extra >= n) {
            return false;
        }
        for (std::size_t k = 1; k <= extra; ++k) {
            const auto cc = static_cast<unsigned char>(bytes[i + k]);
            if ((cc & 0xC0) != 0x80) {
                return false;
            }
            cp = (cp << 6) | (cc & 0x3F);
        }
        // Overlong forms, surrogates, and out-of-range code points.
        if ((extra == 1 && cp < 0x80) || (extra == 2 && cp < 0x800) || (extra == 3 && cp < 0x10000) ||
            cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) {
            return false;
        }
        i += extra + 1;
    }
    return true;
}

DecodedText decode(std::string_view bytes, const DecoderPolicy& policy) {
    if (is_valid_utf8(bytes)) {
        return {std::string(bytes), false};
    }
    if (policy.fallback == FallbackDecoder::kNone) {
        fail(ErrorCode::kCorpus, "input is not valid UTF-8 and no fallback decoder is configured");
    }
    DecodedText decoded;
    decoded.used_fallback = true;
    decoded.utf8.reserve(bytes.size() + bytes.size() / 8);
    for (char c : bytes) {
        append_codepoint(decoded.utf8, static_cast<unsigned char>(c));
    }
    return decoded;
}

UtteranceParse parse_utterances(std::string_view bytes, const DecoderPolicy& policy) {
    UtteranceParse result;
    const DecodedText decoded = decode(bytes, policy);
    result.used_fallback_decoder = decoded.used_fallback;
    std::unordered_map<std::string, std::size_t> seen;

    for_each_line(decoded.utf8, [&](std::size_t line_number, std::string_view line) {
        if (line.empty()) {
            return;
        }
        const auto fields = split_fields(line);
        if (fields.size() != 5) {
            result.diagnostics.push_back(
                {line_number, "expected 5 fields, found " + std::to_string(fields.size())});
            return;
        }
        UtteranceRecord record{std::string(fields[0]), std::string(fields[1]), std::string(fields[2]),
                               std::string(fields[3]), std::string(fields[4])};
        const auto [it, inserted] = seen.emplace(record.line_id, line_number);
        if (!inserted) {
            fail(ErrorCode::kCorpus, "duplicate line_id " + record.line_id + " on line " +
                                         std::to_string(line_number) + " (first seen on line " +
                                         std::to_string(it->second) + ")");
        }
        result.records.push_back(std::move(record));
    });
    return result;
}

bool parse_line_id_list(std::string_view literal, std::vector<std::string>& out) {
    out.clear();
    auto is_space = [](char c) { return c == ' ' || c == '\t'; };
    std::size_t i = 0;
    const std::size_t n = literal.size();
    auto skip_ws = [&] {
        while (i < n && is_space(literal[i])) {
            ++i;
        }
    };
    skip_ws();
    if (i >= n || literal[i] != '[') {
        return false;
    }
    ++i;
    skip_ws();
    if (i < n && literal[i] == ']') {
        ++i;
        skip_ws();
        return i == n;
    }
    while (true) {
        skip_ws();
        if (i >= n || (literal[i] != '\'' && literal[i] != '"')) {
            return false;
        }
        const char quote = literal[i++];
        const std::size_t close = literal.find(quote, i);
        if (close == std::string_view::npos || close == i) {
            return false;
        }
        out.emplace_back(literal.substr(i, close - i));
        i = close + 1;
        skip_ws();
        if (i >= n) {
            return false;
        }
        if (literal[i] == ',') {
            ++i;
            continue;
        }
        if (literal[i] == ']') {
            ++i;
            skip_ws();
            return i == n;
        }
        return false;
    }
}

ConversationParse parse_conversations(std::string_view bytes, const DecoderPolicy& policy) {
    ConversationParse result;
    const DecodedText decoded = decode(bytes, policy);
    for_each_line(decoded.utf8, [&](std::size_t line_number, std::string_view line) {
        if (line.empty()) {
            return;
        }
        const auto fields = split_fields(line);
        if (fields.size() != 4) {
            result.diagnostics.push_back(
                {line_number, "expected 4 fields, found " + std::to_string(fields.size())});
            return;
        }
        ConversationRecord record{std::string(fields[0]), std::string(fields[1]), std::string(fields[2]), {}};
        if (!parse_line_id_list(fields[3], record.line_ids)) {
            result.diagnostics.push_back({line_number, "unparseable line id list"});
            return;
        }
        if (record.line_ids.size() < 2) {
            result.diagnostics.push_back({line_number, "conversation shorter than 2 lines"});
            return;
        }
        result.records.push_back(std::move(record));
    });
    return result;
}

Resolution resolve(const std::vector<ConversationRecord>& conversations,
                   const std::vector<UtteranceRecord>& lines) {
    std::unordered_map<std::string_view, const UtteranceRecord*> by_id;
    by_id.reserve(lines.size());
    for (const auto& line : lines) {
        by_id.emplace(line.line_id, &line);
    }

    Resolution result;
    for (std::size_t index = 0; index < conversations.size(); ++index) {
        const auto& conversation = conversations[index];
        DroppedConversation dropped{index, {}};
        ResolvedConversation resolved{index, {}};
        resolved.utterances.reserve(conversation.line_ids.size());
        for (const auto& id : conversation.line_ids) {
            const auto it = by_id.find(id);
            if (it == by_id.end()) {
                dropped.missing_line_ids.push_back(id);
            } else if (dropped.missing_line_ids.empty()) {
                resolved.utterances.push_back(*it->second);
            }
        }
        if (dropped.missing_line_ids.empty()) {
            result.conversations.push_back(std::move(resolved));
        } else {
            result.dropped.push_back(std::move(dropped));
        }
    }
    return result;
}

Json to_json(const UtteranceRecord& record) {
    return Json{{"line_id", record.line_id},
                {"character_id", record.character_id},
                {"movie_id", record.movie_id},
                {"character_name", record.character_name},
                {"text", record.text}};
}

Json to_json(const ResolvedConversation& conversation) {
    Json utterances = Json::array();
    for (const auto& u : conversation.utterances) {
        utterances.push_back(to_json(u));
    }
    return Json{{"conversation_index", conversation.conversation_index}, {"utterances", std::move(utterances)}};
}

Json to_json(const Diagnostic& diagnostic) {
    return Json{{"line_number", diagnostic.line_number}, {"reason", diagnostic.reason}};
}

Json to_json(const DroppedConversation& dropped) {
    return Json{{"conversation_index", dropped.conversation_index}, {"missing_line_ids", dropped.missing_line_ids}};
}

ResolvedConversation resolved_from_json(const Json& row) {
    ResolvedConversation conversation;
    conversation.conversation_index = row.at("conversation_index").get<std::size_t>();
    for (const auto& u : row.at("utterances")) {
        conversation.utterances.push_back({u.at("line_id").get<std::string>(), u.at("character_id").get<std::string>(),
                                           u.at("movie_id").get<std::string>(),
                                           u.at("character_name").get<std::string>(), u.at("text").get<std::string>()});
    }
    return conversation;
}

}  // namespace dialogtune::corpus
