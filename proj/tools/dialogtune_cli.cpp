// Copyright (c) 2026, dialogtune contributors
// SPDX-License-Identifier: Apache-2.0

// Command-line driver. Talks to the library only through the C API.

#include <dialogtune/dialogtune.h>

#include <CLI11.hpp>

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <iostream>
#include <string>
#include <thread>

namespace {

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

void log_line(const char* message, void*) { std::fprintf(stderr, "[dialogtune] %s\n", message); }

// Exit codes: 0 ok, 2 invalid config/arguments, 3 missing input,
// 4 partial (resumable), 5 locked/conflict, 1 anything else.
int exit_code(dt_status status) {
    switch (status) {
        case DT_OK: return 0;
        case DT_CONFIG:
        case DT_INVALID_ARGUMENT: return 2;
        case DT_NOT_FOUND: return 3;
        case DT_PARTIAL: return 4;
        case DT_LOCKED:
        case DT_CONFLICT: return 5;
        default: return 1;
    }
}

int report_failure(dt_status status) {
    std::fprintf(stderr, "{\"error\": {\"code\": \"%s\", \"message\": ", dt_status_name(status));
    // The message may contain quotes; emit it as a JSON string.
    std::string escaped;
    for (const char* p = dt_last_error(); *p != '\0'; ++p) {
        const char c = *p;
        if (c == '"' || c == '\\') {
            escaped += '\\';
            escaped += c;
        } else if (c == '\n') {
            escaped += "\\n";
        } else if (static_cast<unsigned char>(c) < 0x20) {
            char buf[8];
            std::snprintf(buf, sizeof buf, "\\u%04x", c);
            escaped += buf;
        } else {
            escaped += c;
        }
    }
    std::fprintf(stderr, "\"%s\", \"details\": %s}}\n", escaped.c_str(), dt_last_error_details());
    return exit_code(status);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dialogtune: movie-dialogue fine-tuning pipeline"};
    app.require_subcommand(1);
    // Options are accepted after the subcommand too.
    app.fallthrough();

    std::string config_path = "dialogtune.json";
    bool dry_run = false;
    bool resume = false;
    bool force = false;
    bool quiet = false;
    std::string evaluator = "evaluator";
    std::uint64_t seed = 0;

    app.add_option("-c,--config", config_path, "Pipeline config file (JSON)");
    auto* seed_opt = app.add_option("--seed", seed, "Replace every configured seed");
    app.add_flag("--dry-run", dry_run, "Validate config and inputs without side effects");
    app.add_flag("--resume", resume, "Continue a partial prefgen/geval stage");
    app.add_flag("--force", force, "Discard existing stage state before running");
    app.add_flag("-q,--quiet", quiet, "No progress output on stderr");

    const char* const* names = dt_stage_names();
    std::vector<CLI::App*> stages;
    for (std::size_t i = 0; names[i] != nullptr; ++i) {
        const std::string name = names[i];
        auto* sub = app.add_subcommand(name, "Run the " + name + " stage");
        if (name == "ballots") {
            sub->add_option("--evaluator", evaluator, "Evaluator id recorded on each ballot");
        }
        stages.push_back(sub);
    }
    CLI11_PARSE(app, argc, argv);

    dt_pipeline_options options;
    dt_pipeline_options_init(&options);
    options.config_path = config_path.c_str();
    options.dry_run = dry_run ? 1 : 0;
    options.resume = resume ? 1 : 0;
    options.force = force ? 1 : 0;
    options.has_seed = seed_opt->count() > 0 ? 1 : 0;
    options.seed = seed;
    options.evaluator_id = evaluator.c_str();
    options.log = quiet ? nullptr : log_line;

    dt_pipeline* pipeline = nullptr;
    if (const dt_status st = dt_pipeline_open(&options, &pipeline); st != DT_OK) {
        return report_failure(st);
    }

    const std::string stage = app.get_subcommands().front()->get_name();
    int code = 0;
    if (stage == "serve") {
        dt_server* server = nullptr;
        dt_status st = dt_server_open(pipeline, &server);
        int port = 0;
        if (st == DT_OK && dry_run) {
            std::printf("{\"stage\": \"serve\", \"status\": \"dry_run\"}\n");
        } else if (st == DT_OK && (st = dt_server_start(server, &port)) == DT_OK) {
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            std::printf("{\"stage\": \"serve\", \"status\": \"listening\", \"port\": %d}\n", port);
            std::fflush(stdout);
            while (!g_stop) {
                std::this_thread::sleep_for(std::chrono::milliseconds(100));
            }
            dt_server_stop(server);
        }
        code = st == DT_OK ? 0 : report_failure(st);
        dt_server_close(server);
    } else {
        char* result = nullptr;
        const dt_status st = dt_pipeline_run(pipeline, stage.c_str(), &result);
        if (result != nullptr) {
            std::printf("%s\n", result);
            dt_string_free(result);
        }
        code = st == DT_OK ? 0 : report_failure(st);
    }
    dt_pipeline_close(pipeline);
    return code;
}
