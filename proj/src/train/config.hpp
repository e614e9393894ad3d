// Copyright (c) 2026, dialogtune contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "common/jsonl.hpp"
#include "train/backend.hpp"
#include "tune/tune_math.hpp"

namespace dialogtune::train {

struct OptimizerConfig {
    std::string name = "adam";
    double learning_rate = 1e-2;
    std::string schedule = "constant";  // constant | linear | cosine
    int warmup_steps = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.0;
};

struct TrainConfig {
    std::string backend = "toy";
    std::string base_model_id = "toy";
    WeightPrecision weight_precision = WeightPrecision::kFourBitNf4;
    ComputePrecision compute_precision = ComputePrecision::kFloat32;
    LoraSettings lora;
    tune::NeftuneConfig neftune;
    tune::AccumulationSpec accumulation{4, 2};
    std::size_t max_sequence_length = 512;
    bool flash_attention = false;
    std::uint64_t seed = 0;
    OptimizerConfig optimizer;
    int max_steps = 100;
    int eval_every = 25;
    int checkpoint_every = 25;
    double dpo_beta = 0.1;
};

Json to_json(const TrainConfig& config);
/// Throws Error(kConfig) listing every invalid or unknown field.
TrainConfig train_config_from_json(const Json& value);
/// Appends field errors under `path` instead of throwing.
TrainConfig read_train_config(const Json& value, const std::string& path, std::vector<std::string>& errors);

/// Sorted-key JSON, so equal configs serialize to identical bytes.
std::string canonical_form(const TrainConfig& config);
std::string config_hash(const TrainConfig& config);

BackendLoadSpec load_spec(const TrainConfig& config);
AdamSettings adam_settings(const OptimizerConfig& optimizer, double learning_rate);
/// Learning rate for 1-based `step` under warmup and schedule.
double scheduled_learning_rate(const OptimizerConfig& optimizer, int step, int max_steps);

const char* to_string(WeightPrecision precision);
const char* to_string(ComputePrecision precision);

}  // namespace dialogtune::train
