// Copyright (c) 2026, dialogtune contributors
// SPDX-License-Identifier: Apache-2.0

#include "common/error.hpp"

namespace dialogtune {

const char* error_code_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::kInvalidArgument: return "invalid_argument";
        case ErrorCode::kConfig: return "config";
        case ErrorCode::kIo: return "io";
        case ErrorCode::kCorpus: return "corpus";
        case ErrorCode::kBackend: return "backend";
        case ErrorCode::kJudge: return "judge";
        case ErrorCode::kNotFound: return "not_found";
        case ErrorCode::kUnavailable: return "unavailable";
        case ErrorCode::kLocked: return "locked";
        case ErrorCode::kNumeric: return "numeric";
        case ErrorCode::kTimeout: return "timeout";
        case ErrorCode::kConflict: return "conflict";
        case ErrorCode::kInternal: return "internal";
    }
    return "unknown";
}

}  // namespace dialogtune
