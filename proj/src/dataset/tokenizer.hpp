// Copyright (c) 2026, dialogtune contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dialogtune::dataset {

using TokenId = int;

/// Token encoder shared by dataset preparation, training, and serving.
class Tokenizer {
public:
    virtual ~Tokenizer() = default;

    virtual std::vector<TokenId> encode(std::string_view text) const = 0;
    virtual std::string decode(std::span<const TokenId> ids) const = 0;
    virtual int vocab_size() const = 0;
    /// Stable identifier recorded in dataset manifests.
    virtual std::string id() const = 0;
    virtual TokenId pad_id() const = 0;
    /// Token that ends an assistant turn; generation stops on it.
    virtual TokenId stop_id() const = 0;
};

/// 64-symbol case-folding character tokenizer used with the toy backend.
/// The three chat markers are single special tokens.
class CharTokenizer final : public Tokenizer {
public:
    static constexpr TokenId kPad = 0;
    static constexpr TokenId kImStart = 1;
    static constexpr TokenId kImEnd = 2;
    static constexpr TokenId kEndOfText = 3;
    static constexpr TokenId kUnknown = 63;

    std::vector<TokenId> encode(std::string_view text) const override;
    std::string decode(std::span<const TokenId> ids) const override;
    int vocab_size() const override { return 64; }
    std::string id() const override { return "char64-v1"; }
    TokenId pad_id() const override { return kPad; }
    TokenId stop_id() const override { return kImEnd; }
};

}  // namespace dialogtune::dataset
