// Copyright (c) 2026, dialogtune contributors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <regex>

#include "common/hash.hpp"
#include "common/rng.hpp"
#include "judge/judge_client.hpp"

namespace dialogtune::judge {
namespace {

constexpr std::array kOpeners = {"Listen", "Look",   "Honestly", "Wait",  "Hey",    "Come on",
                                 "Well",   "Please", "Okay",     "Jesus", "Darling", "Sir"};
constexpr std::array kBodies = {
    "where were you last night",        "you can't just walk out on me",
    "we need to talk about the money",  "the car won't start again",
    "did you hear what she said",       "i never asked for any of this",
    "they found the body by the river", "you promised you'd be here",
    "how long have you known",          "the train leaves at midnight",
    "i think someone is following us",  "what do you want from me",
    "he's not coming back",             "tell me the truth for once",
    "we could leave tonight",           "i saw you with him",
    "the captain wants a word",         "nobody leaves this room",
    "you look like you've seen a ghost", "this is the last time i ask"};
constexpr std::array kClosers = {"?", ".", "!", ", okay?", ", right?", "...", ", I swear.", ", kid."};

std::string between(const std::string& text, const std::string& start, const std::string& end) {
    const auto a = text.find(start);
    if (a == std::string::npos) {
        return {};
    }
    const auto from = a + start.size();
    const auto b = end.empty() ? std::string::npos : text.find(end, from);
    return text.substr(from, b == std::string::npos ? std::string::npos : b - from);
}

// Heuristic dialogue quality in [0, 1]: mostly letters, a sentence-ish
// length, and ending punctuation.
double quality(const std::string& text) {
    if (text.empty()) {
        return 0.0;
    }
    std::size_t letters = 0;
    std::size_t spaces = 0;
    for (unsigned char c : text) {
        letters += std::isalpha(c) ? 1 : 0;
        spaces += c == ' ' ? 1 : 0;
    }
    const double letter_ratio = static_cast<double>(letters + spaces) / static_cast<double>(text.size());
    const double words = static_cast<double>(spaces) + 1.0;
    const double length_score = std::exp(-std::pow((words - 8.0) / 6.0, 2.0));
    const char last = text.back();
    const double punct = (last == '.' || last == '?' || last == '!') ? 1.0 : 0.0;
    return std::clamp(0.6 * letter_ratio * letter_ratio + 0.3 * length_score + 0.1 * punct, 0.0, 1.0);
}

std::string prompt_text(const JudgeRequest& request) {
    std::string text;
    for (const auto& m : request.messages) {
        text += m.content;
        text += '\n';
    }
    return text;
}

JudgeResponse generate_lines(const std::string& prompt, const std::string& fingerprint) {
    static const std::regex count_re(R"((\d+)\s+(?:new\s+)?(?:distinct\s+)?(?:lines|prompts))");
    std::smatch m;
    int count = 25;
    if (std::regex_search(prompt, m, count_re)) {
        count = std::clamp(std::stoi(m[1].str()), 1, 200);
    }
    Rng rng(stable_hash64(fingerprint));
    JudgeResponse response;
    for (int i = 1; i <= count; ++i) {
        std::string line = kOpeners[rng.below(kOpeners.size())];
        line += ", ";
        line += kBodies[rng.below(kBodies.size())];
        line += kClosers[rng.below(kClosers.size())];
        response.text += std::to_string(i) + ". " + line + "\n";
    }
    return response;
}

JudgeResponse prefer(const std::string& prompt) {
    const std::string first = between(prompt, "Response 1:\n", "\n\nResponse 2:");
    const std::string second = between(prompt, "Response 2:\n", "\n\n");
    const double qa = quality(first);
    const double qb = quality(second);
    bool pick_first = qa > qb;
    if (qa == qb) {
        pick_first = stable_hash64(first) < stable_hash64(second);
    }
    JudgeResponse response;
    response.text = pick_first ? "first" : "second";
    return response;
}

JudgeResponse score(const std::string& prompt) {
    const std::string reply = between(prompt, "AI Response:\n", "\n\nEvaluation Form");
    const double q = quality(reply);
    const double centre = 1.0 + 4.0 * q;
    std::array<double, 5> logits{};
    for (int s = 1; s <= 5; ++s) {
        logits[s - 1] = -std::pow(static_cast<double>(s) - centre, 2.0);
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double l : logits) {
        z += std::exp(l - mx);
    }
    TokenLogprob token;
    std::size_t best = 0;
    for (std::size_t i = 0; i < 5; ++i) {
        const double lp = logits[i] - mx - std::log(z);
        token.top.push_back({std::to_string(i + 1), lp});
        if (logits[i] > logits[best]) {
            best = i;
        }
    }
    std::sort(token.top.begin(), token.top.end(),
              [](const TopLogprob& a, const TopLogprob& b) { return a.logprob > b.logprob; });
    token.token = std::to_string(best + 1);
    token.logprob = token.top.front().logprob;
    JudgeResponse response;
    response.text = token.token;
    response.tokens.push_back(std::move(token));
    return response;
}

}  // namespace

JudgeResponse OfflineJudge::complete(const JudgeRequest& request) {
    const std::string prompt = prompt_text(request);
    JudgeResponse response;
    if (prompt.find("Evaluation Form") != std::string::npos) {
        response = score(prompt);
        if (!request.top_logprobs) {
            response.tokens.clear();
        }
    } else if (prompt.find("Response 1:") != std::string::npos &&
               prompt.find("Response 2:") != std::string::npos) {
        response = prefer(prompt);
    } else if (prompt.find("numbered list") != std::string::npos) {
        response = generate_lines(prompt, request_fingerprint(request));
    } else {
        throw JudgeError("offline judge does not recognize this request", false);
    }
    response.model = model_;
    response.usage.prompt_tokens = static_cast<long>(prompt.size() / 4);
    response.usage.completion_tokens = static_cast<long>(response.text.size() / 4 + 1);
    return response;
}

}  // namespace dialogtune::judge
