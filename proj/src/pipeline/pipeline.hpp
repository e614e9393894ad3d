// Copyright (c) 2026, dialogtune contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "common/jsonl.hpp"
#include "pipeline/pipeline_config.hpp"
#include "serve/chat_service.hpp"

namespace dialogtune::pipeline {

/// Stage names in chain order.
const std::vector<std::string>& stage_names();

struct RunFlags {
    bool dry_run = false;
    /// Continue a partial prefgen/geval state instead of refusing.
    bool resume = false;
    /// Discard stale or partial state of the stage before running.
    bool force = false;
    std::string evaluator_id = "evaluator";
    std::istream* input = nullptr;   // ballots; defaults to std::cin
    std::ostream* output = nullptr;  // ballots; defaults to std::cout
    std::function<void(const std::string&)> log;
};

struct StageResult {
    std::string stage;
    /// completed | up_to_date | dry_run | partial
    std::string status;
    Json summary;
    std::filesystem::path output_dir;
};

/// One subcommand process per work directory: <work_dir>/.lock holds the
/// owner pid; a lock left by a dead process is taken over.
class WorkDirLock {
public:
    explicit WorkDirLock(const std::filesystem::path& work_dir);
    ~WorkDirLock();
    WorkDirLock(const WorkDirLock&) = delete;
    WorkDirLock& operator=(const WorkDirLock&) = delete;

private:
    std::filesystem::path path_;
};

class Pipeline {
public:
    Pipeline(PipelineConfig config, RunFlags flags);

    /// Runs one stage (not "serve"). Throws Error on failure; a missing
    /// input is Error(kNotFound) naming the file.
    StageResult run(const std::string& stage);

    /// Chat service over the three variants with this config's checkpoints.
    std::unique_ptr<serve::ChatService> make_chat_service() const;

    const PipelineConfig& config() const { return config_; }
    std::filesystem::path stage_dir(const std::string& stage) const;
    std::filesystem::path sft_checkpoint() const;
    std::filesystem::path dpo_checkpoint() const;

private:
    struct StagePlan;
    StagePlan plan(const std::string& stage) const;
    void log(const std::string& message) const;

    StageResult ingest(const StagePlan& plan);
    StageResult pairs(const StagePlan& plan);
    StageResult split(const StagePlan& plan);
    StageResult pack(const StagePlan& plan);
    StageResult sft(const StagePlan& plan);
    StageResult prefgen(const StagePlan& plan);
    StageResult dpo(const StagePlan& plan);
    StageResult generate_responses(const StagePlan& plan);
    StageResult geval(const StagePlan& plan);
    StageResult ballots(const StagePlan& plan);
    StageResult report(const StagePlan& plan);

    StageResult finish(const StagePlan& plan, const std::vector<std::string>& outputs, Json summary);

    PipelineConfig config_;
    RunFlags flags_;
};

}  // namespace dialogtune::pipeline
