// Copyright (c) 2026, dialogtune contributors
// SPDX-License-Identifier: Apache-2.0

#include "dataset/tokenizer.hpp"

#include <array>

namespace dialogtune::dataset {
namespace {

constexpr std::string_view kImStartText = "<|im_start|>";
constexpr std::string_view kImEndText = "<|im_end|>";
constexpr std::string_view kEndOfTextText = "<|endoftext|>";

// Ids 4..62 in order; 63 is <unk>.
constexpr std::string_view kSymbols = "\n abcdefghijklmnopqrstuvwxyz0123456789.,!?'\"-:;()&*/#$%+=@_";
static_assert(kSymbols.size() == 59);

constexpr std::array<TokenId, 256> build_table() {
    std::array<TokenId, 256> table{};
    for (auto& t : table) {
        t = CharTokenizer::kUnknown;
    }
    for (std::size_t i = 0; i < kSymbols.size(); ++i) {
        table[static_cast<unsigned char>(kSymbols[i])] = static_cast<TokenId>(i + 4);
    }
    for (char c = 'A'; c <= 'Z'; ++c) {
        table[static_cast<unsigned char>(c)] = table[static_cast<unsigned char>(c - 'A' + 'a')];
    }
    return table;
}

constexpr auto kTable = build_table();

}  // namespace

std::vector<TokenId> CharTokenizer::encode(std::string_view text) const {
    std::vector<TokenId> ids;
    ids.reserve(text.size());
    std::size_t i = 0;
    while (i < text.size()) {
        if (text[i] == '<') {
            const std::string_view rest = text.substr(i);
            if (rest.starts_with(kImStartText)) {
                ids.push_back(kImStart);
                i += kImStartText.size();
                continue;
            }
            if (rest.starts_with(kImEndText)) {
                ids.push_back(kImEnd);
                i += kImEndText.size();
                continue;
            }
            if (rest.starts_with(kEndOfTextText)) {
                ids.push_back(kEndOfText);
                i += kEndOfTextText.size();
                continue;
            }
        }
        const auto byte = static_cast<unsigned char>(text[i]);
        if (byte >= 0x80) {
            // One <unk> per multi-byte UTF-8 sequence.
            std::size_t len = (byte & 0xE0) == 0xC0 ? 2 : (byte & 0xF0) == 0xE0 ? 3 : (byte & 0xF8) == 0xF0 ? 4 : 1;
            ids.push_back(kUnknown);
            i += len;
            continue;
        }
        ids.push_back(kTable[byte]);
        ++i;
    }
    return ids;
}

std::string CharTokenizer::decode(std::span<const TokenId> ids) const {
    std::string out;
    for (TokenId id : ids) {
        switch (id) {
            case kPad: break;
            case kImStart: out += kImStartText; break;
            case kImEnd: out += kImEndText; break;
            case kEndOfText: out += kEndOfTextText; break;
            case kUnknown: out += '?'; break;
            default:
                if (id >= 4 && id < 63) {
                    out += kSymbols[static_cast<std::size_t>(id - 4)];
                }
        }
    }
    return out;
}

}  // namespace dialogtune::dataset
