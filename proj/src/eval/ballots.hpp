// Copyright (c) 2026, dialogtune contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "common/jsonl.hpp"
#include "common/variant.hpp"

namespace dialogtune::eval {

/// order[position] is the variant shown at that position.
struct HumanBallot {
    std::string ballot_id;
    std::int64_t prompt_id = 0;
    std::string evaluator_id;
    std::array<ModelVariant, 3> order{ModelVariant::kBase, ModelVariant::kSft, ModelVariant::kDpo};
    int selected_position = 0;
};

bool is_permutation_of_variants(const std::array<ModelVariant, 3>& order);

Json to_json(const HumanBallot& ballot);
/// Throws Error(kInvalidArgument) on unknown variant names or shape errors.
HumanBallot ballot_from_json(const Json& row);

struct BallotTally {
    std::map<ModelVariant, std::size_t> picks;
    std::map<ModelVariant, double> proportions;
    std::size_t total = 0;  // accepted ballots
    std::vector<std::string> rejected;
};

/// Pools all ballots. Ballots whose order is not a permutation, or whose
/// selection is out of range, are rejected with a diagnostic. No accepted
/// ballot -> Error(kInvalidArgument).
BallotTally tally_ballots(const std::vector<HumanBallot>& ballots);

/// Applies the ballot's order to raw per-variant responses, i.e. what the
/// evaluator saw; inverse of reading a selection back through the order.
std::array<std::string, 3> shuffle_for_display(const HumanBallot& ballot,
                                               const std::map<ModelVariant, std::string>& by_variant);

struct BallotItem {
    std::int64_t prompt_id = 0;
    std::string prompt;
    std::map<ModelVariant, std::string> responses;
};

struct BallotSessionResult {
    std::vector<HumanBallot> ballots;
    bool quit_early = false;
};

/// Interactive collection: shows each prompt with the three responses in a
/// per-ballot seeded order and reads "1"/"2"/"3" (or "q") from `in`.
BallotSessionResult collect_ballots(const std::vector<BallotItem>& items, const std::string& evaluator_id,
                                    std::uint64_t seed, std::istream& in, std::ostream& out,
                                    const std::vector<std::string>& already_done = {});

}  // namespace dialogtune::eval
