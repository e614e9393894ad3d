// Copyright (c) 2026, dialogtune contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace dialogtune {

enum class ErrorCode {
    kInvalidArgument = 1,
    kConfig,
    kIo,
    kCorpus,
    kBackend,
    kJudge,
    kNotFound,
    kUnavailable,
    kLocked,
    kNumeric,
    kTimeout,
    kConflict,
    kInternal,
};

const char* error_code_name(ErrorCode code);

/// Exception type thrown across the library. The C API maps `code` onto its
/// status enum; `details` carries field-level errors for config validation.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message, std::vector<std::string> details = {})
        : std::runtime_error(message), code_(code), details_(std::move(details)) {}

    ErrorCode code() const noexcept { return code_; }
    const std::vector<std::string>& details() const noexcept { return details_; }

private:
    ErrorCode code_;
    std::vector<std::string> details_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

inline void require(bool condition, ErrorCode code, const std::string& message) {
    if (!condition) {
        throw Error(code, message);
    }
}

}  // namespace dialogtune
