// Copyright (c) 2026, dialogtune contributors
// SPDX-License-Identifier: Apache-2.0

#include <httplib.h>

#include <cstdlib>

#include "judge/judge_client.hpp"

namespace dialogtune::judge {

HttpJudgeClient::HttpJudgeClient(HttpJudgeConfig config) : config_(std::move(config)) {
    const auto scheme_end = config_.base_url.find("://");
    require(scheme_end != std::string::npos, ErrorCode::kConfig,
            "judge base_url must include a scheme: " + config_.base_url);
    const auto path_start = config_.base_url.find('/', scheme_end + 3);
    origin_ = config_.base_url.substr(0, path_start);
    path_ = path_start == std::string::npos ? "" : config_.base_url.substr(path_start);
    while (!path_.empty() && path_.back() == '/') {
        path_.pop_back();
    }
    path_ += "/chat/completions";
}

JudgeResponse HttpJudgeClient::complete(const JudgeRequest& request) {
    const char* key = std::getenv(config_.api_key_env.c_str());
    if (key == nullptr || *key == '\0') {
        throw JudgeError("environment variable " + config_.api_key_env + " is not set", false);
    }
    httplib::Client client(origin_);
    client.set_connection_timeout(config_.timeout_seconds);
    client.set_read_timeout(config_.timeout_seconds);
    client.set_bearer_token_auth(key);

    const auto result = client.Post(path_, request_body(request).dump(), "application/json");
    if (!result) {
        throw JudgeError("judge transport error: " + httplib::to_string(result.error()), true);
    }
    const int status = result->status;
    if (status == 429 || status >= 500) {
        throw JudgeError("judge returned HTTP " + std::to_string(status), true);
    }
    if (status != 200) {
        throw JudgeError("judge returned HTTP " + std::to_string(status) + ": " + result->body.substr(0, 200),
                         false);
    }
    const Json body = Json::parse(result->body, nullptr, false);
    if (body.is_discarded()) {
        throw JudgeError("judge returned a non-JSON body", true);
    }
    return parse_completion(body);
}

}  // namespace dialogtune::judge
