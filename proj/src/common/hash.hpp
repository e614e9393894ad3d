// Copyright (c) 2026, dialogtune contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace dialogtune {

/// Incremental SHA-256; hex digests name runs, datasets, and judge requests.
class Sha256 {
public:
    Sha256();
    ~Sha256();
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;

    Sha256& update(std::string_view bytes);
    Sha256& update(std::span<const std::byte> bytes);
    std::string hex_digest();

private:
    void* ctx_;
};

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

/// Stable 64-bit value derived from a string; used to split seeds per record.
std::uint64_t stable_hash64(std::string_view bytes);

}  // namespace dialogtune
