// Copyright (c) 2026, dialogtune contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <fstream>
#include <mutex>
#include <string>
#include <vector>

#include <json.hpp>

namespace dialogtune {

using Json = nlohmann::json;

/// Reads every object from a JSON-lines file. Blank lines are skipped; a
/// truncated final line (killed writer) is ignored rather than fatal.
std::vector<Json> read_jsonl(const std::filesystem::path& path);

void write_jsonl(const std::filesystem::path& path, const std::vector<Json>& rows);

void write_json(const std::filesystem::path& path, const Json& value);
Json read_json(const std::filesystem::path& path);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

/// Append-only JSON-lines writer. Each append is flushed, and appends from
/// several threads are serialized.
class JsonlAppender {
public:
    explicit JsonlAppender(const std::filesystem::path& path);

    void append(const Json& row);
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
    std::ofstream out_;
    std::mutex mutex_;
};

}  // namespace dialogtune
