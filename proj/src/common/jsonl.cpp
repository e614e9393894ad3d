// Copyright (c) 2026, dialogtune contributors
// SPDX-License-Identifier: Apache-2.0

#include "common/jsonl.hpp"

#include <sstream>

#include "common/error.hpp"

namespace dialogtune {

std::vector<Json> read_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorCode::kNotFound, "missing input file: " + path.string());
    std::vector<Json> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        Json row = Json::parse(line, nullptr, false);
        if (row.is_discarded()) {
            if (in.peek() == std::char_traits<char>::eof()) {
                break;
            }
            fail(ErrorCode::kIo, "malformed JSON line in " + path.string());
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<Json>& rows) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::trunc);
    require(static_cast<bool>(out), ErrorCode::kIo, "cannot write " + path.string());
    for (const auto& row : rows) {
        out << row.dump() << '\n';
    }
}

void write_json(const std::filesystem::path& path, const Json& value) {
    write_text(path, value.dump(2) + "\n");
}

Json read_json(const std::filesystem::path& path) {
    const std::string text = read_text(path);
    Json value = Json::parse(text, nullptr, false);
    require(!value.is_discarded(), ErrorCode::kIo, "malformed JSON in " + path.string());
    return value;
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorCode::kNotFound, "missing input file: " + path.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorCode::kIo, "cannot write " + path.string());
    out << text;
}

JsonlAppender::JsonlAppender(const std::filesystem::path& path) : path_(path) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    // A torn final line from an interrupted writer is cut so new rows start
    // on a fresh line.
    if (std::filesystem::exists(path)) {
        const std::string text = read_text(path);
        if (!text.empty() && text.back() != '\n') {
            const auto keep = text.rfind('\n');
            std::filesystem::resize_file(path, keep == std::string::npos ? 0 : keep + 1);
        }
    }
    out_.open(path, std::ios::app);
    require(static_cast<bool>(out_), ErrorCode::kIo, "cannot append to " + path.string());
}

void JsonlAppender::append(const Json& row) {
    const std::string line = row.dump();
    std::lock_guard lock(mutex_);
    out_ << line << '\n';
    out_.flush();
}

}  // namespace dialogtune
