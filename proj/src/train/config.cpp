// Copyright (c) 2026, dialogtune contributors
// SPDX-License-Identifier: Apache-2.0

#include "train/config.hpp"

#include <cmath>
#include <numbers>

#include "common/error.hpp"
#include "common/field_reader.hpp"
#include "common/hash.hpp"

namespace dialogtune::train {

const char* to_string(WeightPrecision precision) {
    switch (precision) {
        case WeightPrecision::kFourBitNf4: return "four_bit_nf4";
        case WeightPrecision::kSixteenBit: return "sixteen_bit";
        case WeightPrecision::kThirtyTwoBit: return "thirty_two_bit";
    }
    return "four_bit_nf4";
}

const char* to_string(ComputePrecision precision) {
    return precision == ComputePrecision::kBrainFloat16 ? "brain_float_16" : "float_32";
}

Json to_json(const TrainConfig& c) {
    return Json{
        {"backend", c.backend},
        {"base_model_id", c.base_model_id},
        {"weight_precision", to_string(c.weight_precision)},
        {"compute_precision", to_string(c.compute_precision)},
        {"lora", {{"rank", c.lora.rank}, {"alpha", c.lora.alpha}, {"target_layers", c.lora.target_layers}}},
        {"neftune",
         {{"noise_alpha", c.neftune.noise_alpha},
          {"distribution", c.neftune.distribution == tune::NoiseDistribution::kUniform ? "uniform" : "gaussian"},
          {"seed", c.neftune.seed}}},
        {"accumulation",
         {{"micro_batch_size", c.accumulation.micro_batch_size},
          {"accumulation_steps", c.accumulation.accumulation_steps}}},
        {"max_sequence_length", c.max_sequence_length},
        {"flash_attention", c.flash_attention},
        {"seed", c.seed},
        {"optimizer",
         {{"name", c.optimizer.name},
          {"learning_rate", c.optimizer.learning_rate},
          {"schedule", c.optimizer.schedule},
          {"warmup_steps", c.optimizer.warmup_steps},
          {"beta1", c.optimizer.beta1},
          {"beta2", c.optimizer.beta2},
          {"epsilon", c.optimizer.epsilon},
          {"weight_decay", c.optimizer.weight_decay}}},
        {"max_steps", c.max_steps},
        {"eval_every", c.eval_every},
        {"checkpoint_every", c.checkpoint_every},
        {"dpo_beta", c.dpo_beta},
    };
}

TrainConfig read_train_config(const Json& value, const std::string& path, std::vector<std::string>& errors) {
    TrainConfig c;
    FieldReader r(value, path, errors);
    r.read("backend", c.backend);
    r.read("base_model_id", c.base_model_id);

    std::string weight = to_string(c.weight_precision);
    r.read_choice("weight_precision", weight, {"four_bit_nf4", "sixteen_bit", "thirty_two_bit"});
    c.weight_precision = weight == "four_bit_nf4"  ? WeightPrecision::kFourBitNf4
                         : weight == "sixteen_bit" ? WeightPrecision::kSixteenBit
                                                   : WeightPrecision::kThirtyTwoBit;
    std::string compute = to_string(c.compute_precision);
    r.read_choice("compute_precision", compute, {"brain_float_16", "float_32"});
    c.compute_precision = compute == "brain_float_16" ? ComputePrecision::kBrainFloat16 : ComputePrecision::kFloat32;

    {
        auto lora = r.child("lora");
        lora.read("rank", c.lora.rank);
        lora.read("alpha", c.lora.alpha);
        lora.read("target_layers", c.lora.target_layers);
        lora.check(c.lora.rank >= 1, "rank", "must be >= 1");
        lora.check(c.lora.alpha > 0.0, "alpha", "must be positive");
        lora.check(!c.lora.target_layers.empty(), "target_layers", "must name at least one layer");
        lora.finish();
    }
    {
        auto nef = r.child("neftune");
        nef.read("noise_alpha", c.neftune.noise_alpha);
        std::string dist = "uniform";
        nef.read_choice("distribution", dist, {"uniform", "gaussian"});
        c.neftune.distribution =
            dist == "uniform" ? tune::NoiseDistribution::kUniform : tune::NoiseDistribution::kGaussian;
        nef.read("seed", c.neftune.seed);
        nef.check(c.neftune.noise_alpha >= 0.0, "noise_alpha", "must be nonnegative");
        nef.finish();
    }
    {
        auto acc = r.child("accumulation");
        acc.read("micro_batch_size", c.accumulation.micro_batch_size);
        acc.read("accumulation_steps", c.accumulation.accumulation_steps);
        acc.check(c.accumulation.micro_batch_size >= 1, "micro_batch_size", "must be >= 1");
        acc.check(c.accumulation.accumulation_steps >= 1, "accumulation_steps", "must be >= 1");
        acc.finish();
    }
    r.read("max_sequence_length", c.max_sequence_length);
    r.read("flash_attention", c.flash_attention);
    r.read("seed", c.seed);
    {
        auto opt = r.child("optimizer");
        opt.read_choice("name", c.optimizer.name, {"adam"});
        opt.read("learning_rate", c.optimizer.learning_rate);
        opt.read_choice("schedule", c.optimizer.schedule, {"constant", "linear", "cosine"});
        opt.read("warmup_steps", c.optimizer.warmup_steps);
        opt.read("beta1", c.optimizer.beta1);
        opt.read("beta2", c.optimizer.beta2);
        opt.read("epsilon", c.optimizer.epsilon);
        opt.read("weight_decay", c.optimizer.weight_decay);
        opt.check(c.optimizer.learning_rate > 0.0, "learning_rate", "must be positive");
        opt.check(c.optimizer.warmup_steps >= 0, "warmup_steps", "must be nonnegative");
        opt.finish();
    }
    r.read("max_steps", c.max_steps);
    r.read("eval_every", c.eval_every);
    r.read("checkpoint_every", c.checkpoint_every);
    r.read("dpo_beta", c.dpo_beta);
    r.check(c.max_sequence_length >= 1, "max_sequence_length", "must be >= 1");
    r.check(c.max_steps >= 1, "max_steps", "must be >= 1");
    r.check(c.eval_every >= 1, "eval_every", "must be >= 1");
    r.check(c.checkpoint_every >= 1, "checkpoint_every", "must be >= 1");
    r.check(c.dpo_beta > 0.0, "dpo_beta", "must be positive");
    r.finish();
    return c;
}

TrainConfig train_config_from_json(const Json& value) {
    std::vector<std::string> errors;
    TrainConfig config = read_train_config(value, "", errors);
    if (!errors.empty()) {
        throw Error(ErrorCode::kConfig, "invalid training config", errors);
    }
    return config;
}

std::string canonical_form(const TrainConfig& config) { return to_json(config).dump(); }

std::string config_hash(const TrainConfig& config) { return sha256_hex(canonical_form(config)); }

BackendLoadSpec load_spec(const TrainConfig& config) {
    return {config.base_model_id, config.weight_precision, config.compute_precision,
            config.lora,          config.flash_attention,  config.seed};
}

AdamSettings adam_settings(const OptimizerConfig& optimizer, double learning_rate) {
    return {learning_rate, optimizer.beta1, optimizer.beta2, optimizer.epsilon, optimizer.weight_decay};
}

double scheduled_learning_rate(const OptimizerConfig& optimizer, int step, int max_steps) {
    const double base = optimizer.learning_rate;
    if (optimizer.warmup_steps > 0 && step <= optimizer.warmup_steps) {
        return base * static_cast<double>(step) / static_cast<double>(optimizer.warmup_steps);
    }
    const int decay_steps = std::max(1, max_steps - optimizer.warmup_steps);
    const double progress =
        std::clamp(static_cast<double>(step - optimizer.warmup_steps) / static_cast<double>(decay_steps), 0.0, 1.0);
    if (optimizer.schedule == "linear") {
        return base * (1.0 - progress);
    }
    if (optimizer.schedule == "cosine") {
        return base * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
    }
    return base;
}

}  // namespace dialogtune::train
