// Copyright (c) 2026, dialogtune contributors
// SPDX-License-Identifier: Apache-2.0

#include "serve/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "common/error.hpp"

namespace dialogtune::serve {

void validate(const GenerationParams& params) {
    require(std::isfinite(params.temperature) && params.temperature > 0.0, ErrorCode::kInvalidArgument,
            "temperature must be a positive finite number");
    require(params.top_k >= 0, ErrorCode::kInvalidArgument, "top_k must be nonnegative");
    require(params.top_p > 0.0 && params.top_p <= 1.0, ErrorCode::kInvalidArgument, "top_p must lie in (0, 1]");
    require(params.max_new_tokens >= 1, ErrorCode::kInvalidArgument, "max_new_tokens must be at least 1");
}

Json to_json(const GenerationParams& params) {
    return Json{{"temperature", params.temperature},
                {"top_k", params.top_k},
                {"top_p", params.top_p},
                {"max_new_tokens", params.max_new_tokens}};
}

GenerationParams params_from_json(const Json& value, const GenerationParams& defaults) {
    GenerationParams params = defaults;
    if (value.is_null()) {
        return params;
    }
    require(value.is_object(), ErrorCode::kInvalidArgument, "params must be an object");
    for (const auto& [key, field] : value.items()) {
        if (key == "temperature") {
            require(field.is_number(), ErrorCode::kInvalidArgument, "temperature must be a number");
            params.temperature = field.get<double>();
        } else if (key == "top_k") {
            require(field.is_number_integer(), ErrorCode::kInvalidArgument, "top_k must be an integer");
            params.top_k = field.get<int>();
        } else if (key == "top_p") {
            require(field.is_number(), ErrorCode::kInvalidArgument, "top_p must be a number");
            params.top_p = field.get<double>();
        } else if (key == "max_new_tokens") {
            require(field.is_number_integer(), ErrorCode::kInvalidArgument, "max_new_tokens must be an integer");
            params.max_new_tokens = field.get<int>();
        } else {
            fail(ErrorCode::kInvalidArgument, "unknown params field: " + key);
        }
    }
    validate(params);
    return params;
}

std::vector<double> filter_logits(std::span<const double> logits, const GenerationParams& params) {
    validate(params);
    const std::size_t n = logits.size();
    require(n > 0, ErrorCode::kInvalidArgument, "empty logits");
    for (double v : logits) {
        require(std::isfinite(v), ErrorCode::kInvalidArgument, "non-finite logit");
    }

    // Descending by logit, ties by index, so every filter acts on a prefix.
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return logits[a] > logits[b]; });

    std::size_t keep = n;
    if (params.top_k > 0) {
        keep = std::min<std::size_t>(keep, static_cast<std::size_t>(params.top_k));
    }

    const double top = logits[order[0]] / params.temperature;
    std::vector<double> weights(keep);
    double total = 0.0;
    for (std::size_t i = 0; i < keep; ++i) {
        weights[i] = std::exp(logits[order[i]] / params.temperature - top);
        total += weights[i];
    }

    if (params.top_p < 1.0) {
        double cumulative = 0.0;
        std::size_t cut = keep;
        for (std::size_t i = 0; i < keep; ++i) {
            cumulative += weights[i] / total;
            if (cumulative >= params.top_p - 1e-12) {
                cut = i + 1;
                break;
            }
        }
        keep = cut;
    }

    // Normalize in index order so a no-op filter is bit-identical to softmax.
    std::vector<double> probs(n, 0.0);
    for (std::size_t i = 0; i < keep; ++i) {
        probs[order[i]] = weights[i];
    }
    total = 0.0;
    for (double w : probs) {
        total += w;
    }
    for (double& w : probs) {
        w /= total;
    }
    return probs;
}

std::size_t sample_index(std::span<const double> probabilities, Rng& rng) {
    const double u = rng.uniform();
    double cumulative = 0.0;
    std::size_t last_nonzero = 0;
    for (std::size_t i = 0; i < probabilities.size(); ++i) {
        if (probabilities[i] <= 0.0) {
            continue;
        }
        last_nonzero = i;
        cumulative += probabilities[i];
        if (u < cumulative) {
            return i;
        }
    }
    return last_nonzero;
}

}  // namespace dialogtune::serve
