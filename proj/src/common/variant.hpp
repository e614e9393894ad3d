// Copyright (c) 2026, dialogtune contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

namespace dialogtune {

enum class ModelVariant { kBase = 0, kSft = 1, kDpo = 2 };

inline constexpr std::array<ModelVariant, 3> kAllVariants = {ModelVariant::kBase, ModelVariant::kSft,
                                                              ModelVariant::kDpo};

inline const char* to_string(ModelVariant v) {
    switch (v) {
        case ModelVariant::kBase: return "base";
        case ModelVariant::kSft: return "sft";
        case ModelVariant::kDpo: return "dpo";
    }
    return "base";
}

inline std::optional<ModelVariant> parse_variant(std::string_view name) {
    for (auto v : kAllVariants) {
        if (name == to_string(v)) {
            return v;
        }
    }
    return std::nullopt;
}

}  // namespace dialogtune
