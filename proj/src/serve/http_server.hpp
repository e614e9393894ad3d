// Copyright (c) 2026, dialogtune contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <memory>
#include <string>
#include <thread>

#include "common/error.hpp"
#include "serve/chat_service.hpp"

namespace dialogtune::serve {

struct HttpConfig {
    std::string host = "127.0.0.1";
    int port = 8080;  // 0 picks a free port
    /// Access-Control-Allow-Origin value; empty disables CORS headers.
    std::string cors_origin = "*";
};

/// HTTP status for an error code; always 4xx for caller-side problems.
int http_status_for(ErrorCode code);

/// JSON API over a ChatService:
///   POST /conversations
///   GET  /conversations/{id}
///   POST /conversations/{id}/messages   {text, params?, variant?}
///   POST /conversations/{id}/regenerate {variant, params?}
///   GET  /health
///   GET  /variants
/// Errors are {"code": ..., "message": ...}.
class HttpServer {
public:
    HttpServer(ChatService& service, HttpConfig config);
    ~HttpServer();
    HttpServer(const HttpServer&) = delete;
    HttpServer& operator=(const HttpServer&) = delete;

    /// Binds and serves on a background thread; returns the bound port.
    int start();
    /// Binds and serves on the calling thread until stop().
    void run();
    void stop();
    int port() const { return port_; }

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    HttpConfig config_;
    std::thread thread_;
    int port_ = 0;
};

}  // namespace dialogtune::serve
