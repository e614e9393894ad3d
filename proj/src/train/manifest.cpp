// Copyright (c) 2026, dialogtune contributors
// SPDX-License-Identifier: Apache-2.0

#include "train/manifest.hpp"

#include <algorithm>
#include <chrono>

#include "common/error.hpp"

namespace dialogtune::train {

std::optional<CheckpointRecord> RunManifest::latest_checkpoint() const {
    if (checkpoints.empty()) {
        return std::nullopt;
    }
    return *std::max_element(checkpoints.begin(), checkpoints.end(),
                             [](const auto& a, const auto& b) { return a.step < b.step; });
}

bool manifest_exists(const std::filesystem::path& run_dir) {
    return std::filesystem::exists(run_dir / kManifestFile);
}

RunManifest load_manifest(const std::filesystem::path& run_dir) {
    RunManifest m;
    m.dir = run_dir;
    for (const auto& rec : read_jsonl(run_dir / kManifestFile)) {
        const std::string type = rec.value("type", "");
        if (type == "start") {
            m.run_id = rec.value("run_id", "");
            m.kind = rec.value("kind", "");
            m.config_hash = rec.value("config_hash", "");
            m.dataset_hash = rec.value("dataset_hash", "");
            m.config = rec.value("config", Json::object());
            m.trainable_parameters = rec.value("trainable_parameters", std::size_t{0});
            m.total_parameters = rec.value("total_parameters", std::size_t{0});
            m.base_hash_before = rec.value("base_weights_hash", "");
        } else if (type == "resume") {
            const int from = rec.value("from_step", 0);
            m.resumed_from_step = from;
            std::erase_if(m.train_losses, [&](const LossPoint& p) { return p.step > from; });
            std::erase_if(m.evals, [&](const EvalPoint& p) { return p.step > from || (from == 0 && p.step == 0); });
            std::erase_if(m.checkpoints, [&](const CheckpointRecord& p) { return p.step > from; });
            m.aborted = false;
        } else if (type == "step") {
            m.train_losses.push_back({rec.at("step").get<int>(), rec.at("loss").get<double>()});
        } else if (type == "eval") {
            EvalPoint p{rec.at("step").get<int>(), rec.at("loss").get<double>(), std::nullopt};
            if (rec.contains("preference_accuracy")) {
                p.preference_accuracy = rec.at("preference_accuracy").get<double>();
            }
            m.evals.push_back(p);
        } else if (type == "checkpoint") {
            m.checkpoints.push_back({rec.at("step").get<int>(), rec.at("path").get<std::string>()});
        } else if (type == "complete") {
            m.completed = true;
            m.duration_seconds = rec.value("duration_seconds", 0.0);
            m.base_hash_after = rec.value("base_weights_hash", "");
        } else if (type == "aborted") {
            m.aborted = true;
            m.abort_reason = rec.value("reason", "");
        }
    }
    return m;
}

ManifestWriter::ManifestWriter(const std::filesystem::path& run_dir) : appender_(run_dir / kManifestFile) {}

void ManifestWriter::append(Json record) {
    const auto now = std::chrono::system_clock::now().time_since_epoch();
    record["timestamp_ms"] = std::chrono::duration_cast<std::chrono::milliseconds>(now).count();
    appender_.append(record);
}

}  // namespace dialogtune::train
