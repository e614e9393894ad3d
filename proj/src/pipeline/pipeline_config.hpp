// Copyright (c) 2026, dialogtune contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "common/jsonl.hpp"
#include "dataset/dataset.hpp"
#include "judge/judge_client.hpp"
#include "serve/chat_service.hpp"
#include "serve/http_server.hpp"
#include "train/config.hpp"

namespace dialogtune::pipeline {

struct PathsConfig {
    std::filesystem::path lines;          // utterance file
    std::filesystem::path conversations;  // conversation file
    std::filesystem::path work_dir = "work";
    /// Optional explicit adapter checkpoints for serving and response
    /// generation; empty means "the latest from the sft/dpo stages".
    std::filesystem::path sft_checkpoint;
    std::filesystem::path dpo_checkpoint;
};

struct DatasetConfig {
    std::size_t max_len = dataset::kDefaultMaxSequenceLength;
    double test_fraction = 0.20;
    double val_fraction = 0.20;
    std::uint64_t seed = 0;
    std::string fallback_decoder = "latin1";  // latin1 | none
};

struct PrefgenSettings {
    std::size_t prompt_count = 10000;
    int batch_size = 25;
    double prompt_temperature = 1.0;
    int concurrency = 4;
    std::uint64_t seed = 0;
    serve::GenerationParams params;
};

struct EvalSettings {
    /// Test items to evaluate; 0 means the whole test split.
    std::size_t prompt_count = 2000;
    int concurrency = 4;
    int top_logprobs = 5;
    std::string judge_model = "gpt-4o-mini";
    double cost_per_1k_prompt_tokens = 0.0;
    double cost_per_1k_completion_tokens = 0.0;
    std::uint64_t seed = 0;
    serve::GenerationParams params;
    /// Ballot file consumed by `report`; defaults to the ballots stage output.
    std::filesystem::path ballots;
};

struct ServeSettings {
    serve::HttpConfig http;
    serve::GenerationParams params;
    std::string busy_policy = "reject";  // reject | queue
    int timeout_ms = 30000;
    std::filesystem::path state_dir;  // empty keeps conversations in memory
};

struct PipelineConfig {
    PathsConfig paths;
    DatasetConfig dataset;
    train::TrainConfig sft;
    train::TrainConfig dpo;
    judge::JudgeSettings judge;
    PrefgenSettings prefgen;
    EvalSettings eval;
    ServeSettings serve;
    std::filesystem::path source;  // file the config was read from, if any
};

/// Validates everything up front and throws Error(kConfig) with one detail
/// per bad or unknown field. Relative paths resolve against `base_dir`.
PipelineConfig pipeline_config_from_json(const Json& value, const std::filesystem::path& base_dir = {});
PipelineConfig load_pipeline_config(const std::filesystem::path& path);
/// Environment overrides: DIALOGTUNE_SERVE_HOST, DIALOGTUNE_SERVE_PORT,
/// DIALOGTUNE_SFT_CHECKPOINT, DIALOGTUNE_DPO_CHECKPOINT.
void apply_environment(PipelineConfig& config);
/// Replaces every seed in the config.
void override_seed(PipelineConfig& config, std::uint64_t seed);

Json to_json(const PipelineConfig& config);

}  // namespace dialogtune::pipeline
