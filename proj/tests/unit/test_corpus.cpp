// Copyright (c) 2026, dialogtune contributors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "common/error.hpp"
#include "common/jsonl.hpp"
#include "corpus/corpus.hpp"
#include "test_support.hpp"

using namespace dialogtune;
using namespace dialogtune::corpus;

namespace {
const std::string kSep = " +++$+++ ";
std::string line(const std::string& id, const std::string& text) {
    return id + kSep + "u0" + kSep + "m0" + kSep + "BOB" + kSep + text + "\n";
}
}  // namespace

TEST_CASE("utterance lines split into five fields") {
    const auto parsed = parse_utterances(line("L1", "Hello there.") + line("L2", "Who is it?"));
    REQUIRE(parsed.records.size() == 2);
    CHECK(parsed.diagnostics.empty());
    CHECK(parsed.records[0].line_id == "L1");
    CHECK(parsed.records[0].character_name == "BOB");
    CHECK(parsed.records[1].text == "Who is it?");
}

TEST_CASE("text may contain the separator's pieces and stays intact") {
    const auto parsed = parse_utterances(line("L1", "a $ b +++ c"));
    REQUIRE(parsed.records.size() == 1);
    CHECK(parsed.records[0].text == "a $ b +++ c");
}

TEST_CASE("malformed utterance lines become diagnostics with line numbers") {
    const std::string bytes = line("L1", "ok") + "L2" + kSep + "u0" + kSep + "m0" + kSep + "only four\n" + line("L3", "fine");
    const auto parsed = parse_utterances(bytes);
    CHECK(parsed.records.size() == 2);
    REQUIRE(parsed.diagnostics.size() == 1);
    CHECK(parsed.diagnostics[0].line_number == 2);
}

TEST_CASE("empty utterance text is kept") {
    const auto parsed = parse_utterances(line("L1", ""));
    REQUIRE(parsed.records.size() == 1);
    CHECK(parsed.records[0].text.empty());
}

TEST_CASE("invalid UTF-8 decodes through the Latin-1 fallback") {
    const auto parsed = parse_utterances(line("L1", "caf\xe9"));
    REQUIRE(parsed.records.size() == 1);
    CHECK(parsed.used_fallback_decoder);
    CHECK(parsed.records[0].text == "caf\xc3\xa9");
    CHECK(is_valid_utf8(parsed.records[0].text));
}

TEST_CASE("without a fallback decoder invalid bytes are fatal") {
    try {
        parse_utterances(line("L1", "caf\xe9") + line("L2", "ok"), {FallbackDecoder::kNone});
        FAIL("expected a corpus error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::kCorpus);
    }
}

TEST_CASE("line id lists parse the python literal form") {
    std::vector<std::string> ids;
    REQUIRE(parse_line_id_list("['L1', 'L2', 'L3']", ids));
    CHECK(ids == std::vector<std::string>{"L1", "L2", "L3"});
    ids.clear();
    CHECK(!parse_line_id_list("L1, L2", ids));
}

TEST_CASE("conversations with a missing line are dropped and reported") {
    const auto lines = parse_utterances(line("L1", "a") + line("L2", "b") + line("L3", "c"));
    const std::string convs = "u0" + kSep + "u1" + kSep + "m0" + kSep + "['L1', 'L2']\n" + "u0" + kSep + "u1" + kSep +
                              "m0" + kSep + "['L2', 'L9']\n" + "u0" + kSep + "u1" + kSep + "m0" + kSep +
                              "['L3', 'L1']\n";
    const auto parsed = parse_conversations(convs);
    REQUIRE(parsed.records.size() == 3);
    const auto res = resolve(parsed.records, lines.records);
    REQUIRE(res.conversations.size() == 2);
    REQUIRE(res.dropped.size() == 1);
    CHECK(res.dropped[0].conversation_index == 1);
    CHECK(res.dropped[0].missing_line_ids == std::vector<std::string>{"L9"});
    // Order follows the conversation's list, not the lines file.
    CHECK(res.conversations[1].utterances[0].text == "c");
    CHECK(res.conversations[1].utterances[1].text == "a");
}

TEST_CASE("bundled fixture parses to 50 conversations with one bad line and one dropped conversation") {
    const auto lines = parse_utterances(read_text(dt_test::fixture("movie_lines.txt")));
    const auto convs = parse_conversations(read_text(dt_test::fixture("movie_conversations.txt")));
    const auto res = resolve(convs.records, lines.records);
    CHECK(lines.records.size() == 196);
    CHECK(lines.diagnostics.size() == 1);
    CHECK(res.conversations.size() == 50);
    CHECK(res.dropped.size() == 1);
}

TEST_CASE("resolved conversations roundtrip through JSON") {
    const auto lines = parse_utterances(line("L1", "a") + line("L2", "b"));
    const auto res = resolve({{"m0", "u0", "u1", {"L1", "L2"}}}, lines.records);
    REQUIRE(res.conversations.size() == 1);
    const auto back = resolved_from_json(to_json(res.conversations[0]));
    CHECK(back.conversation_index == res.conversations[0].conversation_index);
    CHECK(back.utterances == res.conversations[0].utterances);
}
