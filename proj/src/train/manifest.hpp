// Copyright (c) 2026, dialogtune contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "common/jsonl.hpp"

namespace dialogtune::train {

struct LossPoint {
    int step = 0;
    double loss = 0.0;
};

struct EvalPoint {
    int step = 0;
    double loss = 0.0;
    std::optional<double> preference_accuracy;  // DPO runs only
};

struct CheckpointRecord {
    int step = 0;
    std::filesystem::path path;
};

/// In-memory view of a run's append-only manifest.jsonl.
struct RunManifest {
    std::filesystem::path dir;
    std::string run_id;
    std::string kind;  // "sft" or "dpo"
    std::string config_hash;
    std::string dataset_hash;
    Json config;
    std::vector<LossPoint> train_losses;
    std::vector<EvalPoint> evals;
    std::vector<CheckpointRecord> checkpoints;
    std::size_t trainable_parameters = 0;
    std::size_t total_parameters = 0;
    std::string base_hash_before;
    std::string base_hash_after;
    double duration_seconds = 0.0;
    bool completed = false;
    bool aborted = false;
    std::string abort_reason;
    /// Set when a call found this run already completed and did no work.
    bool reused_completed = false;
    int resumed_from_step = 0;

    std::optional<CheckpointRecord> latest_checkpoint() const;
};

inline constexpr const char* kManifestFile = "manifest.jsonl";

/// Replays manifest records; a "resume" record rolls the series back to the
/// checkpoint it resumed from.
RunManifest load_manifest(const std::filesystem::path& run_dir);
bool manifest_exists(const std::filesystem::path& run_dir);

class ManifestWriter {
public:
    explicit ManifestWriter(const std::filesystem::path& run_dir);

    void append(Json record);

private:
    JsonlAppender appender_;
};

}  // namespace dialogtune::train
