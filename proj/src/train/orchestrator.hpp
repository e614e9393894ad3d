// Copyright (c) 2026, dialogtune contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>

#include "train/backend.hpp"
#include "train/config.hpp"
#include "train/manifest.hpp"

namespace dialogtune::train {

struct DatasetInfo {
    std::string hash;
    std::size_t max_sequence_length = 512;
};

struct RunOptions {
    std::filesystem::path runs_dir;
    /// Called after every manifest record; for progress output.
    std::function<void(const Json&)> on_record;
};

struct PreferenceExample {
    TrainingSequence chosen;
    TrainingSequence rejected;
};

/// Fails fast when the backend lacks a capability the config asks for.
void check_capabilities(const TrainConfig& config, const ModelBackend& backend, bool needs_logprob_scoring);

std::string sft_run_id(const TrainConfig& config, const DatasetInfo& data);
std::string dpo_run_id(const TrainConfig& config, const DatasetInfo& data, const std::string& reference_id);

/// Supervised fine-tuning of the adapter. Reuses a completed run with the
/// same config and data hash; continues a partial one from its latest
/// checkpoint.
RunManifest run_sft(const TrainConfig& config, std::span<const TrainingSequence> train_set,
                    std::span<const TrainingSequence> validation_set, const DatasetInfo& data,
                    ModelBackend& backend, const RunOptions& options);

/// DPO against the frozen `sft_checkpoint` as reference; the policy starts
/// from the same adapter. An empty path uses the freshly initialized
/// adapter (zero-B) for both.
RunManifest run_dpo(const TrainConfig& config, std::span<const PreferenceExample> preferences,
                    const std::filesystem::path& sft_checkpoint, const DatasetInfo& data, ModelBackend& backend,
                    const RunOptions& options);

/// Mean over sequences of the per-sequence mean token loss, eval mode.
/// With a checkpoint, its adapter is loaded first.
double evaluate_loss(const std::optional<std::filesystem::path>& checkpoint,
                     std::span<const TrainingSequence> dataset, ModelBackend& backend);

/// Per-sequence mean loss averaged over the batch; the SFT objective.
double mean_sequence_loss(const ForwardResult& forward);

struct PreferenceMetrics {
    double mean_loss = 0.0;
    double accuracy = 0.0;  // fraction with policy margin > 0
};

PreferenceMetrics evaluate_preferences(std::span<const PreferenceExample> preferences,
                                       std::span<const double> reference_chosen,
                                       std::span<const double> reference_rejected, double beta,
                                       ModelBackend& backend);

}  // namespace dialogtune::train
