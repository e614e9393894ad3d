// Copyright (c) 2026, dialogtune contributors
// SPDX-License-Identifier: Apache-2.0

#include "serve/http_server.hpp"

#include <httplib.h>

namespace dialogtune::serve {
namespace {

Json error_body(const std::string& code, const std::string& message, const std::vector<std::string>& details = {}) {
    Json body{{"code", code}, {"message", message}};
    if (!details.empty()) {
        body["details"] = details;
    }
    return body;
}

Json status_json(const VariantStatus& s) {
    return Json{{"name", to_string(s.variant)},
                {"available", s.available},
                {"checkpoint", s.checkpoint},
                {"error", s.error.empty() ? Json(nullptr) : Json(s.error)}};
}

Json parse_body(const httplib::Request& req) {
    if (req.body.empty()) {
        return Json::object();
    }
    Json body = Json::parse(req.body, nullptr, false);
    require(!body.is_discarded() && body.is_object(), ErrorCode::kInvalidArgument, "request body must be a JSON object");
    return body;
}

void check_keys(const Json& body, std::initializer_list<const char*> allowed) {
    for (const auto& [key, value] : body.items()) {
        if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }) == allowed.end()) {
            fail(ErrorCode::kInvalidArgument, "unknown field '" + key + "'");
        }
    }
}

std::optional<ModelVariant> variant_field(const Json& body, bool required) {
    if (!body.contains("variant") || body["variant"].is_null()) {
        require(!required, ErrorCode::kInvalidArgument, "field 'variant' is required");
        return std::nullopt;
    }
    require(body["variant"].is_string(), ErrorCode::kInvalidArgument, "field 'variant' must be a string");
    const auto v = parse_variant(body["variant"].get<std::string>());
    require(v.has_value(), ErrorCode::kInvalidArgument,
            "unknown variant '" + body["variant"].get<std::string>() + "' (expected base|sft|dpo)");
    return v;
}

std::optional<GenerationParams> params_field(const Json& body, const GenerationParams& defaults) {
    if (!body.contains("params") || body["params"].is_null()) {
        return std::nullopt;
    }
    auto p = params_from_json(body["params"], defaults);
    validate(p);
    return p;
}

}  // namespace

int http_status_for(ErrorCode code) {
    switch (code) {
        case ErrorCode::kInvalidArgument:
        case ErrorCode::kConfig: return 400;
        case ErrorCode::kNotFound: return 404;
        case ErrorCode::kLocked:
        case ErrorCode::kConflict: return 409;
        case ErrorCode::kUnavailable: return 424;
        case ErrorCode::kTimeout: return 504;
        default: return 500;
    }
}

struct HttpServer::Impl {
    httplib::Server server;
};

HttpServer::HttpServer(ChatService& service, HttpConfig config)
    : impl_(std::make_unique<Impl>()), config_(std::move(config)) {
    auto& srv = impl_->server;
    const std::string cors = config_.cors_origin;

    srv.set_post_routing_handler([cors](const httplib::Request&, httplib::Response& res) {
        if (!cors.empty()) {
            res.set_header("Access-Control-Allow-Origin", cors);
            res.set_header("Access-Control-Allow-Headers", "Content-Type");
            res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
        }
    });
    srv.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    srv.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
        try {
            std::rethrow_exception(ep);
        } catch (const Error& e) {
            res.status = http_status_for(e.code());
            res.set_content(error_body(error_code_name(e.code()), e.what(), e.details()).dump(), "application/json");
        } catch (const std::exception& e) {
            res.status = 500;
            res.set_content(error_body("internal", e.what()).dump(), "application/json");
        }
    });
    srv.set_error_handler([](const httplib::Request&, httplib::Response& res) {
        if (res.body.empty()) {
            res.set_content(error_body(res.status == 404 ? "not_found" : "http_error",
                                       "HTTP " + std::to_string(res.status))
                                .dump(),
                            "application/json");
        }
    });

    auto reply = [](httplib::Response& res, int status, const Json& body) {
        res.status = status;
        res.set_content(body.dump(), "application/json");
    };

    srv.Get("/health", [&service, reply](const httplib::Request&, httplib::Response& res) {
        Json variants = Json::array();
        std::size_t available = 0;
        for (const auto& s : service.list_variants()) {
            variants.push_back(status_json(s));
            available += s.available ? 1 : 0;
        }
        reply(res, 200,
              {{"status", service.ready() ? "ready" : "cold"}, {"available_variants", available},
               {"variants", std::move(variants)}});
    });
    srv.Get("/variants", [&service, reply](const httplib::Request&, httplib::Response& res) {
        service.load_models();
        Json variants = Json::array();
        for (const auto& s : service.list_variants()) {
            variants.push_back(status_json(s));
        }
        reply(res, 200, {{"variants", std::move(variants)}});
    });
    srv.Post("/conversations", [&service, reply](const httplib::Request& req, httplib::Response& res) {
        check_keys(parse_body(req), {});
        reply(res, 201, to_json(service.create_conversation()));
    });
    srv.Get(R"(/conversations/([A-Za-z0-9_-]+))", [&service, reply](const httplib::Request& req,
                                                                     httplib::Response& res) {
        reply(res, 200, to_json(service.get_conversation(req.matches[1])));
    });
    srv.Post(R"(/conversations/([A-Za-z0-9_-]+)/messages)", [&service, reply](const httplib::Request& req,
                                                                             httplib::Response& res) {
        const Json body = parse_body(req);
        check_keys(body, {"text", "params", "variant"});
        require(body.contains("text") && body["text"].is_string(), ErrorCode::kInvalidArgument,
                "field 'text' is required and must be a string");
        const std::string id = req.matches[1];
        const Message m = service.chat(id, body["text"].get<std::string>(),
                                       params_field(body, service.config().default_params), variant_field(body, false));
        reply(res, 200, {{"message", to_json(m)}, {"conversation", to_json(service.get_conversation(id))}});
    });
    srv.Post(R"(/conversations/([A-Za-z0-9_-]+)/regenerate)", [&service, reply](const httplib::Request& req,
                                                                               httplib::Response& res) {
        const Json body = parse_body(req);
        check_keys(body, {"params", "variant"});
        const std::string id = req.matches[1];
        const Message m = service.regenerate_last(id, *variant_field(body, true),
                                                  params_field(body, service.config().default_params));
        reply(res, 200, {{"message", to_json(m)}, {"conversation", to_json(service.get_conversation(id))}});
    });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::start() {
    auto& srv = impl_->server;
    if (config_.port == 0) {
        port_ = srv.bind_to_any_port(config_.host);
    } else {
        port_ = srv.bind_to_port(config_.host, config_.port) ? config_.port : -1;
    }
    require(port_ > 0, ErrorCode::kIo, "cannot bind " + config_.host + ":" + std::to_string(config_.port));
    thread_ = std::thread([&srv] { srv.listen_after_bind(); });
    srv.wait_until_ready();
    return port_;
}

void HttpServer::run() {
    start();
    if (thread_.joinable()) {
        thread_.join();
    }
}

void HttpServer::stop() {
    impl_->server.stop();
    if (thread_.joinable() && thread_.get_id() != std::this_thread::get_id()) {
        thread_.join();
    }
}

}  // namespace dialogtune::serve
