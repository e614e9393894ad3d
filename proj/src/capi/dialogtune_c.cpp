// Copyright (c) 2026, dialogtune contributors
// SPDX-License-Identifier: Apache-2.0

#include "dialogtune/dialogtune.h"

#include <cmath>
#include <cstring>
#include <memory>
#include <new>
#include <string>
#include <vector>

#include "common/error.hpp"
#include "eval/ballots.hpp"
#include "eval/geval.hpp"
#include "pipeline/pipeline.hpp"
#include "serve/http_server.hpp"
#include "serve/sampling.hpp"
#include "tune/tune_math.hpp"

using namespace dialogtune;

struct dt_pipeline {
    std::unique_ptr<pipeline::Pipeline> impl;
    dt_log_fn log = nullptr;
    void* log_user = nullptr;
};

struct dt_server {
    std::unique_ptr<serve::ChatService> service;
    std::unique_ptr<serve::HttpServer> http;
};

namespace {

thread_local std::string g_error;
thread_local std::string g_details = "[]";

void clear_error() {
    g_error.clear();
    g_details = "[]";
}

dt_status set_error(dt_status status, const std::string& message, const std::vector<std::string>& details = {}) {
    g_error = message;
    g_details = Json(details).dump();
    return status;
}

dt_status from_code(ErrorCode code) { return static_cast<dt_status>(static_cast<int>(code)); }

template <typename Fn>
dt_status guarded(Fn&& fn) {
    clear_error();
    try {
        return fn();
    } catch (const Error& e) {
        return set_error(from_code(e.code()), e.what(), e.details());
    } catch (const std::bad_alloc&) {
        return set_error(DT_INTERNAL, "out of memory");
    } catch (const std::exception& e) {
        return set_error(DT_INTERNAL, e.what());
    }
}

char* copy_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (out == nullptr) {
        throw std::bad_alloc();
    }
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

serve::GenerationParams to_params(const dt_generation_params& p) {
    return {p.temperature, p.top_k, p.top_p, p.max_new_tokens};
}

}  // namespace

extern "C" {

const char* dt_version(void) { return "0.1.0"; }

const char* dt_status_name(dt_status status) {
    if (status == DT_OK) return "ok";
    if (status == DT_PARTIAL) return "partial";
    if (status >= DT_INVALID_ARGUMENT && status <= DT_INTERNAL) {
        return error_code_name(static_cast<ErrorCode>(static_cast<int>(status)));
    }
    return "unknown";
}

const char* dt_last_error(void) { return g_error.c_str(); }
const char* dt_last_error_details(void) { return g_details.c_str(); }
void dt_string_free(char* s) { std::free(s); }

void dt_pipeline_options_init(dt_pipeline_options* options) {
    if (options != nullptr) {
        *options = dt_pipeline_options{};
    }
}

dt_status dt_pipeline_open(const dt_pipeline_options* options, dt_pipeline** out) {
    return guarded([&] {
        if (options == nullptr || out == nullptr || options->config_path == nullptr) {
            return set_error(DT_INVALID_ARGUMENT, "dt_pipeline_open needs options, config_path, and out");
        }
        *out = nullptr;
        auto config = pipeline::load_pipeline_config(options->config_path);
        pipeline::apply_environment(config);
        if (options->has_seed) {
            pipeline::override_seed(config, options->seed);
        }
        auto handle = std::make_unique<dt_pipeline>();
        handle->log = options->log;
        handle->log_user = options->log_user;
        pipeline::RunFlags flags;
        flags.dry_run = options->dry_run != 0;
        flags.resume = options->resume != 0;
        flags.force = options->force != 0;
        if (options->evaluator_id != nullptr && *options->evaluator_id != '\0') {
            flags.evaluator_id = options->evaluator_id;
        }
        if (handle->log != nullptr) {
            flags.log = [fn = handle->log, user = handle->log_user](const std::string& m) { fn(m.c_str(), user); };
        }
        handle->impl = std::make_unique<pipeline::Pipeline>(std::move(config), std::move(flags));
        *out = handle.release();
        return DT_OK;
    });
}

void dt_pipeline_close(dt_pipeline* pipeline) { delete pipeline; }

dt_status dt_pipeline_run(dt_pipeline* pipeline, const char* stage, char** result_json) {
    return guarded([&] {
        if (pipeline == nullptr || stage == nullptr) {
            return set_error(DT_INVALID_ARGUMENT, "dt_pipeline_run needs a pipeline and a stage");
        }
        const auto result = pipeline->impl->run(stage);
        if (result_json != nullptr) {
            *result_json = copy_string(Json{{"stage", result.stage},
                                            {"status", result.status},
                                            {"summary", result.summary},
                                            {"output_dir", result.output_dir.string()}}
                                           .dump(2));
        }
        if (result.status == "partial") {
            return set_error(DT_PARTIAL, "stage " + result.stage + " is incomplete; rerun with resume");
        }
        return DT_OK;
    });
}

dt_status dt_pipeline_config_json(const dt_pipeline* pipeline, char** config_json) {
    return guarded([&] {
        if (pipeline == nullptr || config_json == nullptr) {
            return set_error(DT_INVALID_ARGUMENT, "dt_pipeline_config_json needs a pipeline and an output");
        }
        *config_json = copy_string(pipeline::to_json(pipeline->impl->config()).dump(2));
        return DT_OK;
    });
}

const char* const* dt_stage_names(void) {
    static const std::vector<const char*> names = [] {
        std::vector<const char*> v;
        for (const auto& s : pipeline::stage_names()) {
            v.push_back(s.c_str());
        }
        v.push_back(nullptr);
        return v;
    }();
    return names.data();
}

dt_status dt_server_open(const dt_pipeline* pipeline, dt_server** out) {
    return guarded([&] {
        if (pipeline == nullptr || out == nullptr) {
            return set_error(DT_INVALID_ARGUMENT, "dt_server_open needs a pipeline and an output");
        }
        auto server = std::make_unique<dt_server>();
        server->service = pipeline->impl->make_chat_service();
        server->http = std::make_unique<serve::HttpServer>(*server->service, pipeline->impl->config().serve.http);
        *out = server.release();
        return DT_OK;
    });
}

dt_status dt_server_start(dt_server* server, int* port) {
    return guarded([&] {
        if (server == nullptr) {
            return set_error(DT_INVALID_ARGUMENT, "dt_server_start needs a server");
        }
        const int bound = server->http->start();
        if (port != nullptr) {
            *port = bound;
        }
        return DT_OK;
    });
}

void dt_server_stop(dt_server* server) {
    if (server != nullptr) {
        server->http->stop();
    }
}

void dt_server_close(dt_server* server) {
    if (server != nullptr) {
        server->http->stop();
        delete server;
    }
}

dt_generation_params dt_default_generation_params(void) {
    const serve::GenerationParams p;
    return {p.temperature, p.top_k, p.top_p, p.max_new_tokens};
}

dt_status dt_filter_logits(const double* logits, size_t n, const dt_generation_params* params, double* out) {
    return guarded([&] {
        if (logits == nullptr || params == nullptr || out == nullptr || n == 0) {
            return set_error(DT_INVALID_ARGUMENT, "dt_filter_logits needs logits, params, and an output");
        }
        const auto probs = serve::filter_logits(std::span<const double>(logits, n), to_params(*params));
        std::copy(probs.begin(), probs.end(), out);
        return DT_OK;
    });
}

dt_status dt_nf4_roundtrip(const double* values, size_t n, double* out) {
    return guarded([&] {
        if ((values == nullptr || out == nullptr) && n != 0) {
            return set_error(DT_INVALID_ARGUMENT, "dt_nf4_roundtrip needs input and output buffers");
        }
        const auto codebook = tune::Nf4Codebook::standard();
        const auto blocks = tune::nf4_quantize_tensor(std::span<const double>(values, n), codebook);
        const auto restored = tune::nf4_dequantize_tensor(blocks, codebook);
        std::copy(restored.begin(), restored.end(), out);
        return DT_OK;
    });
}

dt_status dt_dpo_loss(double policy_chosen, double policy_rejected, double reference_chosen,
                      double reference_rejected, double beta, double* loss) {
    return guarded([&] {
        if (loss == nullptr) {
            return set_error(DT_INVALID_ARGUMENT, "dt_dpo_loss needs an output");
        }
        *loss = tune::dpo_loss({policy_chosen, policy_rejected, reference_chosen, reference_rejected, beta});
        return DT_OK;
    });
}

dt_status dt_geval_score(const double logprobs[5], double* weighted, double* normalized) {
    return guarded([&] {
        if (logprobs == nullptr || weighted == nullptr || normalized == nullptr) {
            return set_error(DT_INVALID_ARGUMENT, "dt_geval_score needs logprobs and outputs");
        }
        std::vector<std::pair<int, double>> entries;
        for (int s = 1; s <= 5; ++s) {
            entries.emplace_back(s, logprobs[s - 1]);
        }
        const auto dist = eval::distribution_from_logprobs(entries);
        if (!dist) {
            return set_error(DT_INVALID_ARGUMENT, "no finite score log-probability");
        }
        *weighted = eval::weighted_score(*dist);
        *normalized = eval::normalized_score(*weighted);
        return DT_OK;
    });
}

dt_status dt_tally_ballots_file(const char* path, char** result_json) {
    return guarded([&] {
        if (path == nullptr || result_json == nullptr) {
            return set_error(DT_INVALID_ARGUMENT, "dt_tally_ballots_file needs a path and an output");
        }
        std::vector<eval::HumanBallot> ballots;
        for (const auto& row : read_jsonl(path)) {
            ballots.push_back(eval::ballot_from_json(row));
        }
        const auto tally = eval::tally_ballots(ballots);
        Json proportions = Json::object();
        Json picks = Json::object();
        for (auto v : kAllVariants) {
            proportions[to_string(v)] = tally.proportions.at(v);
            picks[to_string(v)] = tally.picks.at(v);
        }
        *result_json = copy_string(Json{{"proportions", proportions},
                                        {"picks", picks},
                                        {"total", tally.total},
                                        {"rejected", tally.rejected}}
                                       .dump(2));
        return DT_OK;
    });
}

}  // extern "C"
