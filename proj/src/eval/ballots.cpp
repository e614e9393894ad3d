// Copyright (c) 2026, dialogtune contributors
// SPDX-License-Identifier: Apache-2.0

#include "eval/ballots.hpp"

#include <algorithm>
#include <istream>
#include <ostream>
#include <set>

#include "common/error.hpp"
#include "common/hash.hpp"
#include "common/rng.hpp"

namespace dialogtune::eval {

bool is_permutation_of_variants(const std::array<ModelVariant, 3>& order) {
    std::set<ModelVariant> seen(order.begin(), order.end());
    return seen.size() == 3;
}

Json to_json(const HumanBallot& ballot) {
    Json order = Json::array();
    for (auto v : ballot.order) {
        order.push_back(to_string(v));
    }
    return Json{{"ballot_id", ballot.ballot_id},
                {"prompt_id", ballot.prompt_id},
                {"evaluator_id", ballot.evaluator_id},
                {"order", std::move(order)},
                {"selected_position", ballot.selected_position}};
}

HumanBallot ballot_from_json(const Json& row) {
    HumanBallot ballot;
    try {
        ballot.ballot_id = row.at("ballot_id").get<std::string>();
        ballot.prompt_id = row.at("prompt_id").get<std::int64_t>();
        ballot.evaluator_id = row.at("evaluator_id").get<std::string>();
        const auto& order = row.at("order");
        require(order.is_array() && order.size() == 3, ErrorCode::kInvalidArgument,
                "ballot order must list three variants");
        for (std::size_t i = 0; i < 3; ++i) {
            const auto v = parse_variant(order[i].get<std::string>());
            require(v.has_value(), ErrorCode::kInvalidArgument,
                    "unknown variant in ballot order: " + order[i].get<std::string>());
            ballot.order[i] = *v;
        }
        ballot.selected_position = row.at("selected_position").get<int>();
    } catch (const Json::exception& e) {
        fail(ErrorCode::kInvalidArgument, std::string("malformed ballot: ") + e.what());
    }
    return ballot;
}

BallotTally tally_ballots(const std::vector<HumanBallot>& ballots) {
    BallotTally tally;
    for (auto v : kAllVariants) {
        tally.picks[v] = 0;
    }
    for (const auto& ballot : ballots) {
        if (!is_permutation_of_variants(ballot.order)) {
            tally.rejected.push_back(ballot.ballot_id + ": order is not a permutation of base/sft/dpo");
            continue;
        }
        if (ballot.selected_position < 0 || ballot.selected_position > 2) {
            tally.rejected.push_back(ballot.ballot_id + ": selected position out of range");
            continue;
        }
        ++tally.picks[ballot.order[static_cast<std::size_t>(ballot.selected_position)]];
        ++tally.total;
    }
    require(tally.total > 0, ErrorCode::kInvalidArgument, "no valid ballots to tally");
    for (auto v : kAllVariants) {
        tally.proportions[v] = static_cast<double>(tally.picks[v]) / static_cast<double>(tally.total);
    }
    return tally;
}

std::array<std::string, 3> shuffle_for_display(const HumanBallot& ballot,
                                               const std::map<ModelVariant, std::string>& by_variant) {
    std::array<std::string, 3> shown;
    for (std::size_t pos = 0; pos < 3; ++pos) {
        shown[pos] = by_variant.at(ballot.order[pos]);
    }
    return shown;
}

BallotSessionResult collect_ballots(const std::vector<BallotItem>& items, const std::string& evaluator_id,
                                    std::uint64_t seed, std::istream& in, std::ostream& out,
                                    const std::vector<std::string>& already_done) {
    const std::set<std::string> done(already_done.begin(), already_done.end());
    BallotSessionResult session;
    std::size_t index = 0;
    for (const auto& item : items) {
        ++index;
        HumanBallot ballot;
        ballot.ballot_id = evaluator_id + "/" + std::to_string(item.prompt_id);
        if (done.count(ballot.ballot_id) != 0) {
            continue;
        }
        ballot.prompt_id = item.prompt_id;
        ballot.evaluator_id = evaluator_id;
        Rng rng(derive_seed(seed, stable_hash64(ballot.ballot_id)));
        rng.shuffle(std::span<ModelVariant>(ballot.order));
        const auto shown = shuffle_for_display(ballot, item.responses);

        out << "\n[" << index << "/" << items.size() << "] " << item.prompt << "\n";
        for (std::size_t pos = 0; pos < 3; ++pos) {
            out << "  " << (pos + 1) << ") " << shown[pos] << "\n";
        }
        while (true) {
            out << "Best reply [1-3, q to quit]: " << std::flush;
            std::string line;
            if (!std::getline(in, line) || line == "q" || line == "Q") {
                session.quit_early = true;
                return session;
            }
            if (line.size() == 1 && line[0] >= '1' && line[0] <= '3') {
                ballot.selected_position = line[0] - '1';
                break;
            }
        }
        session.ballots.push_back(ballot);
    }
    return session;
}

}  // namespace dialogtune::eval
