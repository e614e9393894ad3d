// Copyright (c) 2026, dialogtune contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "common/jsonl.hpp"
#include "common/rng.hpp"

namespace dialogtune::serve {

inline constexpr int kDefaultMaxNewTokens = 64;

struct GenerationParams {
    double temperature = 1.0;
    int top_k = 50;  // 0 disables
    double top_p = 0.9;
    int max_new_tokens = kDefaultMaxNewTokens;

    bool operator==(const GenerationParams&) const = default;
};

/// Throws Error(kInvalidArgument) naming the offending field.
void validate(const GenerationParams& params);

Json to_json(const GenerationParams& params);
/// Missing fields keep `defaults`; unknown fields are rejected.
GenerationParams params_from_json(const Json& value, const GenerationParams& defaults = {});

/// Temperature, then top-k, then top-p over the renormalized survivors.
/// Returns a probability vector with zeros for filtered tokens.
std::vector<double> filter_logits(std::span<const double> logits, const GenerationParams& params);

/// Inverse-CDF draw from a probability vector.
std::size_t sample_index(std::span<const double> probabilities, Rng& rng);

}  // namespace dialogtune::serve
