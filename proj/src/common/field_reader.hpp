// Copyright (c) 2026, dialogtune contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <set>
#include <string>
#include <type_traits>
#include <vector>

#include "common/jsonl.hpp"

namespace dialogtune {

/// Reads optional fields from a JSON object into typed destinations,
/// collecting one message per bad field instead of stopping at the first.
/// finish() reports keys nobody asked for.
class FieldReader {
public:
    FieldReader(const Json& object, std::string path, std::vector<std::string>& errors)
        : object_(object), path_(std::move(path)), errors_(errors) {
        if (!object_.is_null() && !object_.is_object()) {
            errors_.push_back(label() + ": expected an object");
        }
    }

    template <typename T>
    void read(const std::string& key, T& out) {
        seen_.insert(key);
        if (!object_.is_object() || !object_.contains(key)) {
            return;
        }
        const Json& value = object_.at(key);
        // get<T>() would wrap -1 into an unsigned or truncate 2.5 into an int.
        if constexpr (std::is_same_v<T, bool>) {
            if (!value.is_boolean()) {
                errors_.push_back(qualified(key) + ": expected true or false");
                return;
            }
        } else if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) {
            if (!value.is_number_unsigned()) {
                errors_.push_back(qualified(key) + ": expected a non-negative integer");
                return;
            }
        } else if constexpr (std::is_integral_v<T>) {
            if (!value.is_number_integer()) {
                errors_.push_back(qualified(key) + ": expected an integer");
                return;
            }
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!value.is_number()) {
                errors_.push_back(qualified(key) + ": expected a number");
                return;
            }
        }
        try {
            out = value.get<T>();
        } catch (const nlohmann::json::exception&) {
            errors_.push_back(qualified(key) + ": wrong type");
        }
    }

    /// Reads a string constrained to `allowed`.
    void read_choice(const std::string& key, std::string& out, const std::vector<std::string>& allowed) {
        std::string value = out;
        read(key, value);
        for (const auto& a : allowed) {
            if (a == value) {
                out = value;
                return;
            }
        }
        std::string joined;
        for (const auto& a : allowed) {
            joined += (joined.empty() ? "" : ", ") + a;
        }
        errors_.push_back(qualified(key) + ": must be one of {" + joined + "}, got '" + value + "'");
    }

    FieldReader child(const std::string& key) {
        seen_.insert(key);
        static const Json kNull;
        if (object_.is_object() && object_.contains(key)) {
            return FieldReader(object_.at(key), qualified(key), errors_);
        }
        return FieldReader(kNull, qualified(key), errors_);
    }

    bool has(const std::string& key) const { return object_.is_object() && object_.contains(key); }

    void check(bool condition, const std::string& key, const std::string& message) {
        if (!condition) {
            errors_.push_back(qualified(key) + ": " + message);
        }
    }

    void finish() {
        if (!object_.is_object()) {
            return;
        }
        for (const auto& [key, value] : object_.items()) {
            if (!seen_.contains(key)) {
                errors_.push_back(qualified(key) + ": unknown key");
            }
        }
    }

    std::string qualified(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

private:
    std::string label() const { return path_.empty() ? "<root>" : path_; }

    const Json& object_;
    std::string path_;
    std::vector<std::string>& errors_;
    std::set<std::string> seen_;
};

}  // namespace dialogtune
