// Copyright (c) 2026, dialogtune contributors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cstdlib>

#include "common/jsonl.hpp"
#include "judge/judge_client.hpp"
#include "test_support.hpp"

#include <httplib.h>

using namespace dialogtune;
using namespace dialogtune::judge;
using dt_test::ScriptedJudge;
using dt_test::TempDir;

namespace {

Json completion(const std::string& text, bool with_logprobs) {
    Json choice = {{"index", 0}, {"message", {{"role", "assistant"}, {"content", text}}}};
    if (with_logprobs) {
        Json top = Json::array();
        top.push_back({{"token", text}, {"logprob", -0.1}});
        top.push_back({{"token", "3"}, {"logprob", -2.5}});
        Json token = {{"token", text}, {"logprob", -0.1}, {"top_logprobs", top}};
        choice["logprobs"] = {{"content", Json::array({token})}};
    }
    return {{"model", "gpt-4o-2024"}, {"choices", {choice}}, {"usage", {{"prompt_tokens", 12}, {"completion_tokens", 1}}}};
}

}  // namespace

TEST_CASE("request body has the chat-completions shape") {
    auto req = single_prompt("gpt-4o", "Rate it.", 0.0, 5);
    req.max_tokens = 5;
    const Json body = request_body(req);
    CHECK(body["model"] == "gpt-4o");
    CHECK(body["messages"][0]["role"] == "user");
    CHECK(body["messages"][0]["content"] == "Rate it.");
    CHECK(body["temperature"] == 0.0);
    CHECK(body["logprobs"] == true);
    CHECK(body["top_logprobs"] == 5);
    CHECK(body["max_tokens"] == 5);
    const Json plain = request_body(single_prompt("gpt-4o", "x", 1.0));
    CHECK(!plain.contains("logprobs"));
}

TEST_CASE("completions parse text, top log-probabilities and usage") {
    const auto r = parse_completion(completion("4", true));
    CHECK(r.text == "4");
    CHECK(r.model == "gpt-4o-2024");
    REQUIRE(r.tokens.size() == 1);
    CHECK(r.tokens[0].top.size() == 2);
    CHECK(r.tokens[0].top[1].token == "3");
    CHECK(r.usage.prompt_tokens == 12);
    const auto back = response_from_json(to_json(r));
    CHECK(back.text == r.text);
    CHECK(back.tokens[0].top[1].logprob == r.tokens[0].top[1].logprob);
    CHECK_THROWS_AS(parse_completion(Json::object()), JudgeError);
}

TEST_CASE("fingerprints separate request keys and bodies") {
    auto a = single_prompt("m", "same", 0.0);
    auto b = a;
    CHECK(request_fingerprint(a) == request_fingerprint(b));
    b.request_key = "other";
    CHECK(request_fingerprint(a) != request_fingerprint(b));
    b = a;
    b.temperature = 1.0;
    CHECK(request_fingerprint(a) != request_fingerprint(b));
}

TEST_CASE("retryable failures back off exponentially then succeed") {
    ScriptedJudge flaky([](const JudgeRequest&, std::size_t call) {
        if (call < 3) throw JudgeError("429", true);
        return dt_test::text_response("ok");
    });
    std::vector<long> sleeps;
    RetryingJudge judge(flaky, {5, std::chrono::milliseconds(500), 2.0, std::chrono::milliseconds(1500), {}},
                        [&](std::chrono::milliseconds d) { sleeps.push_back(d.count()); });
    CHECK(judge.complete(single_prompt("m", "x", 0.0)).text == "ok");
    CHECK(sleeps == std::vector<long>{500, 1000, 1500});
}

TEST_CASE("non-retryable failures and exhausted attempts surface as errors") {
    ScriptedJudge broken([](const JudgeRequest&, std::size_t) -> JudgeResponse { throw JudgeError("401", false); });
    std::size_t sleeps = 0;
    RetryingJudge once(broken, {}, [&](std::chrono::milliseconds) { ++sleeps; });
    CHECK_THROWS_AS(once.complete(single_prompt("m", "x", 0.0)), JudgeError);
    CHECK(broken.calls() == 1);
    CHECK(sleeps == 0);

    ScriptedJudge busy([](const JudgeRequest&, std::size_t) -> JudgeResponse { throw JudgeError("503", true); });
    RetryingJudge capped(busy, {3, std::chrono::milliseconds(1), 2.0, std::chrono::milliseconds(10), {}},
                         [](std::chrono::milliseconds) {});
    try {
        capped.complete(single_prompt("m", "x", 0.0));
        FAIL("expected failure");
    } catch (const JudgeError& e) {
        CHECK(!e.retryable());
    }
    CHECK(busy.calls() == 3);
}

TEST_CASE("the request log replays answered requests across instances") {
    TempDir dir("dt-judge");
    ScriptedJudge inner([](const JudgeRequest& r, std::size_t) { return dt_test::text_response("re:" + r.request_key); });
    auto req = single_prompt("m", "x", 0.0);
    req.request_key = "k1";
    {
        LoggedJudge judge(inner, dir / "log.jsonl");
        CHECK(judge.complete(req).text == "re:k1");
        CHECK(judge.complete(req).text == "re:k1");
        CHECK(judge.forwarded() == 1);
        CHECK(judge.replayed() == 1);
    }
    LoggedJudge again(inner, dir / "log.jsonl");
    CHECK(again.complete(req).text == "re:k1");
    CHECK(inner.calls() == 1);
    const auto rows = read_jsonl(dir / "log.jsonl");
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].contains("started_ms"));
    CHECK(rows[0]["request"]["messages"][0]["content"] == "x");
}

TEST_CASE("failed requests are logged but not replayed") {
    TempDir dir("dt-judge");
    ScriptedJudge inner([](const JudgeRequest&, std::size_t call) {
        if (call == 0) throw JudgeError("boom", false);
        return dt_test::text_response("fine");
    });
    LoggedJudge judge(inner, dir / "log.jsonl");
    const auto req = single_prompt("m", "x", 0.0);
    CHECK_THROWS_AS(judge.complete(req), JudgeError);
    CHECK(judge.complete(req).text == "fine");
    const auto rows = read_jsonl(dir / "log.jsonl");
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].contains("error"));
}

TEST_CASE("offline judge is deterministic and ignores presentation order") {
    OfflineJudge judge;
    const auto ask = [&](const std::string& first, const std::string& second) {
        return judge.complete(single_prompt("m",
                                            "Prompt:\nwhere?\n\nResponse 1:\n" + first + "\n\nResponse 2:\n" + second +
                                                "\n\nWhich response is better? Answer \"first\" or \"second\".",
                                            0.0))
            .text;
    };
    const std::string good = "I was at the station, waiting for you.";
    const std::string bad = "zz";
    CHECK(ask(good, bad) == "first");
    CHECK(ask(bad, good) == "second");
    CHECK(ask(good, bad) == ask(good, bad));
    CHECK_THROWS_AS(judge.complete(single_prompt("m", "unrelated", 0.0)), JudgeError);
}

TEST_CASE("HTTP client talks to an OpenAI-compatible endpoint and retries 429") {
    httplib::Server server;
    int hits = 0;
    std::string auth;
    Json last_body;
    server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        ++hits;
        auth = req.get_header_value("Authorization");
        last_body = Json::parse(req.body);
        if (hits == 1) {
            res.status = 429;
            return;
        }
        res.set_content(completion("5", true).dump(), "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread th([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    ::setenv("DT_TEST_JUDGE_KEY", "sk-test", 1);
    HttpJudgeClient client({"http://127.0.0.1:" + std::to_string(port) + "/v1", "gpt-4o", "DT_TEST_JUDGE_KEY", 5});
    RetryingJudge judge(client, {3, std::chrono::milliseconds(1), 2.0, std::chrono::milliseconds(5), {}});
    auto req = single_prompt("gpt-4o", "score", 0.0, 5);
    const auto r = judge.complete(req);
    server.stop();
    th.join();
    CHECK(r.text == "5");
    CHECK(hits == 2);
    CHECK(auth == "Bearer sk-test");
    CHECK(last_body["top_logprobs"] == 5);
}

TEST_CASE("HTTP client without credentials fails with a clear error") {
    ::unsetenv("DT_TEST_MISSING_KEY");
    HttpJudgeClient client({"http://127.0.0.1:9/v1", "gpt-4o", "DT_TEST_MISSING_KEY", 1});
    CHECK_THROWS_AS(client.complete(single_prompt("gpt-4o", "x", 0.0)), Error);
}
