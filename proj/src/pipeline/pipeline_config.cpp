// Copyright (c) 2026, dialogtune contributors
// SPDX-License-Identifier: Apache-2.0

#include "pipeline/pipeline_config.hpp"

#include <cstdlib>

#include "common/error.hpp"
#include "common/field_reader.hpp"

namespace dialogtune::pipeline {
namespace {

void read_params(FieldReader r, serve::GenerationParams& p) {
    r.read("temperature", p.temperature);
    r.read("top_k", p.top_k);
    r.read("top_p", p.top_p);
    r.read("max_new_tokens", p.max_new_tokens);
    r.check(p.temperature > 0.0, "temperature", "must be positive");
    r.check(p.top_k >= 0, "top_k", "must be nonnegative");
    r.check(p.top_p > 0.0 && p.top_p <= 1.0, "top_p", "must be in (0, 1]");
    r.check(p.max_new_tokens >= 1, "max_new_tokens", "must be >= 1");
    r.finish();
}

void read_path(FieldReader& r, const std::string& key, std::filesystem::path& out, const std::filesystem::path& base) {
    std::string value = out.string();
    r.read(key, value);
    if (value.empty()) {
        out.clear();
        return;
    }
    std::filesystem::path p(value);
    out = (p.is_absolute() || base.empty() ? p : base / p).lexically_normal();
}

Json params_json(const serve::GenerationParams& p) { return serve::to_json(p); }

}  // namespace

PipelineConfig pipeline_config_from_json(const Json& value, const std::filesystem::path& base_dir) {
    PipelineConfig c;
    std::vector<std::string> errors;
    if (!value.is_object()) {
        throw Error(ErrorCode::kConfig, "pipeline config must be a JSON object");
    }
    FieldReader root(value, "", errors);
    {
        auto r = root.child("paths");
        read_path(r, "lines", c.paths.lines, base_dir);
        read_path(r, "conversations", c.paths.conversations, base_dir);
        read_path(r, "work_dir", c.paths.work_dir, base_dir);
        read_path(r, "sft_checkpoint", c.paths.sft_checkpoint, base_dir);
        read_path(r, "dpo_checkpoint", c.paths.dpo_checkpoint, base_dir);
        r.check(!c.paths.work_dir.empty(), "work_dir", "must be set");
        r.finish();
    }
    {
        auto r = root.child("dataset");
        r.read("max_len", c.dataset.max_len);
        r.read("test_fraction", c.dataset.test_fraction);
        r.read("val_fraction", c.dataset.val_fraction);
        r.read("seed", c.dataset.seed);
        r.read_choice("fallback_decoder", c.dataset.fallback_decoder, {"latin1", "none"});
        r.check(c.dataset.max_len >= 8, "max_len", "must be >= 8");
        r.check(c.dataset.test_fraction > 0.0 && c.dataset.test_fraction < 1.0, "test_fraction", "must be in (0, 1)");
        r.check(c.dataset.val_fraction > 0.0 && c.dataset.val_fraction < 1.0, "val_fraction", "must be in (0, 1)");
        r.finish();
    }
    c.sft = train::read_train_config(value.contains("sft") ? value["sft"] : Json(nullptr), "sft", errors);
    root.child("sft");  // mark as known
    c.dpo = train::read_train_config(value.contains("dpo") ? value["dpo"] : Json(nullptr), "dpo", errors);
    root.child("dpo");
    {
        auto r = root.child("judge");
        r.read_choice("provider", c.judge.provider, {"offline", "openai"});
        r.read("model", c.judge.http.model);
        r.read("base_url", c.judge.http.base_url);
        r.read("api_key_env", c.judge.http.api_key_env);
        r.read("timeout_seconds", c.judge.http.timeout_seconds);
        int attempts = c.judge.retry.max_attempts;
        std::int64_t backoff = c.judge.retry.initial_backoff.count();
        std::int64_t interval = c.judge.retry.min_interval.count();
        r.read("max_attempts", attempts);
        r.read("initial_backoff_ms", backoff);
        r.read("min_interval_ms", interval);
        r.check(attempts >= 1, "max_attempts", "must be >= 1");
        r.check(backoff >= 0, "initial_backoff_ms", "must be nonnegative");
        r.check(interval >= 0, "min_interval_ms", "must be nonnegative");
        r.check(c.judge.http.timeout_seconds >= 1, "timeout_seconds", "must be >= 1");
        c.judge.retry.max_attempts = attempts;
        c.judge.retry.initial_backoff = std::chrono::milliseconds(backoff);
        c.judge.retry.min_interval = std::chrono::milliseconds(interval);
        r.finish();
    }
    {
        auto r = root.child("prefgen");
        r.read("prompt_count", c.prefgen.prompt_count);
        r.read("batch_size", c.prefgen.batch_size);
        r.read("prompt_temperature", c.prefgen.prompt_temperature);
        r.read("concurrency", c.prefgen.concurrency);
        r.read("seed", c.prefgen.seed);
        read_params(r.child("params"), c.prefgen.params);
        r.check(c.prefgen.batch_size >= 1, "batch_size", "must be >= 1");
        r.check(c.prefgen.concurrency >= 1, "concurrency", "must be >= 1");
        r.finish();
    }
    {
        auto r = root.child("eval");
        r.read("prompt_count", c.eval.prompt_count);
        r.read("concurrency", c.eval.concurrency);
        r.read("top_logprobs", c.eval.top_logprobs);
        r.read("judge_model", c.eval.judge_model);
        r.read("cost_per_1k_prompt_tokens", c.eval.cost_per_1k_prompt_tokens);
        r.read("cost_per_1k_completion_tokens", c.eval.cost_per_1k_completion_tokens);
        r.read("seed", c.eval.seed);
        read_path(r, "ballots", c.eval.ballots, base_dir);
        read_params(r.child("params"), c.eval.params);
        r.check(c.eval.concurrency >= 1, "concurrency", "must be >= 1");
        r.check(c.eval.top_logprobs >= 5 && c.eval.top_logprobs <= 20, "top_logprobs", "must be in [5, 20]");
        r.finish();
    }
    {
        auto r = root.child("serve");
        r.read("host", c.serve.http.host);
        r.read("port", c.serve.http.port);
        r.read("cors_origin", c.serve.http.cors_origin);
        r.read_choice("busy_policy", c.serve.busy_policy, {"reject", "queue"});
        r.read("timeout_ms", c.serve.timeout_ms);
        read_path(r, "state_dir", c.serve.state_dir, base_dir);
        read_params(r.child("params"), c.serve.params);
        r.check(c.serve.http.port >= 0 && c.serve.http.port <= 65535, "port", "must be in [0, 65535]");
        r.check(c.serve.timeout_ms >= 1, "timeout_ms", "must be >= 1");
        r.finish();
    }
    root.finish();
    if (!errors.empty()) {
        throw Error(ErrorCode::kConfig, "invalid pipeline config", errors);
    }
    return c;
}

PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
    const std::string text = read_text(path);
    const Json value = Json::parse(text, nullptr, false);
    if (value.is_discarded()) {
        throw Error(ErrorCode::kConfig, "config file is not valid JSON: " + path.string());
    }
    PipelineConfig c = pipeline_config_from_json(value, std::filesystem::absolute(path).parent_path());
    c.source = path;
    return c;
}

void apply_environment(PipelineConfig& config) {
    if (const char* host = std::getenv("DIALOGTUNE_SERVE_HOST"); host && *host) {
        config.serve.http.host = host;
    }
    if (const char* port = std::getenv("DIALOGTUNE_SERVE_PORT"); port && *port) {
        char* end = nullptr;
        const long value = std::strtol(port, &end, 10);
        if (*end != '\0' || value < 0 || value > 65535) {
            throw Error(ErrorCode::kConfig, "invalid configuration", {"DIALOGTUNE_SERVE_PORT: not a port number"});
        }
        config.serve.http.port = static_cast<int>(value);
    }
    if (const char* p = std::getenv("DIALOGTUNE_SFT_CHECKPOINT"); p && *p) {
        config.paths.sft_checkpoint = p;
    }
    if (const char* p = std::getenv("DIALOGTUNE_DPO_CHECKPOINT"); p && *p) {
        config.paths.dpo_checkpoint = p;
    }
}

void override_seed(PipelineConfig& config, std::uint64_t seed) {
    config.dataset.seed = seed;
    config.sft.seed = seed;
    config.dpo.seed = seed;
    config.prefgen.seed = seed;
    config.eval.seed = seed;
}

Json to_json(const PipelineConfig& c) {
    return Json{
        {"paths",
         {{"lines", c.paths.lines.string()},
          {"conversations", c.paths.conversations.string()},
          {"work_dir", c.paths.work_dir.string()},
          {"sft_checkpoint", c.paths.sft_checkpoint.string()},
          {"dpo_checkpoint", c.paths.dpo_checkpoint.string()}}},
        {"dataset",
         {{"max_len", c.dataset.max_len},
          {"test_fraction", c.dataset.test_fraction},
          {"val_fraction", c.dataset.val_fraction},
          {"seed", c.dataset.seed},
          {"fallback_decoder", c.dataset.fallback_decoder}}},
        {"sft", train::to_json(c.sft)},
        {"dpo", train::to_json(c.dpo)},
        {"judge",
         {{"provider", c.judge.provider},
          {"model", c.judge.http.model},
          {"base_url", c.judge.http.base_url},
          {"api_key_env", c.judge.http.api_key_env},
          {"timeout_seconds", c.judge.http.timeout_seconds},
          {"max_attempts", c.judge.retry.max_attempts},
          {"initial_backoff_ms", c.judge.retry.initial_backoff.count()},
          {"min_interval_ms", c.judge.retry.min_interval.count()}}},
        {"prefgen",
         {{"prompt_count", c.prefgen.prompt_count},
          {"batch_size", c.prefgen.batch_size},
          {"prompt_temperature", c.prefgen.prompt_temperature},
          {"concurrency", c.prefgen.concurrency},
          {"seed", c.prefgen.seed},
          {"params", params_json(c.prefgen.params)}}},
        {"eval",
         {{"prompt_count", c.eval.prompt_count},
          {"concurrency", c.eval.concurrency},
          {"top_logprobs", c.eval.top_logprobs},
          {"judge_model", c.eval.judge_model},
          {"cost_per_1k_prompt_tokens", c.eval.cost_per_1k_prompt_tokens},
          {"cost_per_1k_completion_tokens", c.eval.cost_per_1k_completion_tokens},
          {"seed", c.eval.seed},
          {"ballots", c.eval.ballots.string()},
          {"params", params_json(c.eval.params)}}},
        {"serve",
         {{"host", c.serve.http.host},
          {"port", c.serve.http.port},
          {"cors_origin", c.serve.http.cors_origin},
          {"busy_policy", c.serve.busy_policy},
          {"timeout_ms", c.serve.timeout_ms},
          {"state_dir", c.serve.state_dir.string()},
          {"params", params_json(c.serve.params)}}},
    };
}

}  // namespace dialogtune::pipeline
