// Copyright (c) 2026, dialogtune contributors
// SPDX-License-Identifier: Apache-2.0

#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include "common/error.hpp"
#include "tune/tune_math.hpp"

namespace dialogtune::tune {

Nf4Codebook Nf4Codebook::standard(std::size_t block_size) {
    Nf4Codebook codebook;
    codebook.levels = {-1.0,
                       -0.6961928009986877,
                       -0.5250730514526367,
                       -0.39491748809814453,
                       -0.28444138169288635,
                       -0.18477343022823334,
                       -0.09105003625154495,
                       0.0,
                       0.07958029955625534,
                       0.16093020141124725,
                       0.24611230194568634,
                       0.33791524171829224,
                       0.44070982933044434,
                       0.5626170039176941,
                       0.7229568362236023,
                       1.0};
    codebook.block_size = block_size;
    return codebook;
}

Nf4Codebook Nf4Codebook::from_file(const std::filesystem::path& path, std::size_t block_size) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorCode::kNotFound, "cannot open codebook " + path.string());
    Nf4Codebook codebook;
    codebook.block_size = block_size;
    std::size_t count = 0;
    std::string line;
    while (std::getline(in, line)) {
        if (const auto hash = line.find('#'); hash != std::string::npos) {
            line.erase(hash);
        }
        std::istringstream fields(line);
        double value = 0.0;
        while (fields >> value) {
            require(count < 16, ErrorCode::kConfig, "codebook has more than 16 values");
            codebook.levels[count++] = value;
        }
        if (!fields.eof()) {
            fail(ErrorCode::kConfig, "non-numeric token in codebook " + path.string());
        }
    }
    require(count == 16, ErrorCode::kConfig, "codebook must hold exactly 16 values, found " + std::to_string(count));
    codebook.validate();
    return codebook;
}

void Nf4Codebook::validate() const {
    require(block_size > 0, ErrorCode::kConfig, "codebook block size must be positive");
    require(levels.front() == -1.0 && levels.back() == 1.0, ErrorCode::kConfig, "codebook endpoints must be -1 and 1");
    int zeros = 0;
    for (std::size_t i = 0; i < levels.size(); ++i) {
        if (levels[i] == 0.0) {
            ++zeros;
        }
        if (i > 0 && !(levels[i - 1] < levels[i])) {
            fail(ErrorCode::kConfig, "codebook is not strictly ascending");
        }
    }
    require(zeros == 1, ErrorCode::kConfig, "codebook must contain exactly one zero level");
}

std::uint8_t Nf4Codebook::zero_index() const {
    for (std::size_t i = 0; i < levels.size(); ++i) {
        if (levels[i] == 0.0) {
            return static_cast<std::uint8_t>(i);
        }
    }
    fail(ErrorCode::kConfig, "codebook has no zero level");
}

double Nf4Codebook::max_gap() const {
    double gap = 0.0;
    for (std::size_t i = 1; i < levels.size(); ++i) {
        gap = std::max(gap, levels[i] - levels[i - 1]);
    }
    return gap;
}

std::uint8_t nf4_nearest_index(double normalized, const Nf4Codebook& codebook) {
    // Binary search on midpoints; a value exactly on a midpoint stays below it.
    std::size_t lo = 0;
    std::size_t hi = codebook.levels.size() - 1;
    while (lo < hi) {
        const std::size_t mid = (lo + hi) / 2;
        const double threshold = 0.5 * (codebook.levels[mid] + codebook.levels[mid + 1]);
        if (normalized > threshold) {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    return static_cast<std::uint8_t>(lo);
}

QuantizedBlock nf4_quantize(std::span<const double> block, const Nf4Codebook& codebook) {
    require(block.size() <= codebook.block_size, ErrorCode::kInvalidArgument, "block longer than codebook block size");
    QuantizedBlock q;
    q.valid_length = block.size();
    for (double x : block) {
        require(std::isfinite(x), ErrorCode::kNumeric, "non-finite value in quantization block");
        q.absmax = std::max(q.absmax, std::abs(x));
    }
    q.indices.assign(codebook.block_size, codebook.zero_index());
    if (q.absmax == 0.0) {
        return q;
    }
    for (std::size_t i = 0; i < block.size(); ++i) {
        q.indices[i] = nf4_nearest_index(block[i] / q.absmax, codebook);
    }
    return q;
}

std::vector<double> nf4_dequantize(const QuantizedBlock& block, const Nf4Codebook& codebook) {
    std::vector<double> out(block.indices.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        require(block.indices[i] < 16, ErrorCode::kInvalidArgument, "NF4 index out of range");
        out[i] = codebook.levels[block.indices[i]] * block.absmax;
    }
    return out;
}

std::vector<QuantizedBlock> nf4_quantize_tensor(std::span<const double> values, const Nf4Codebook& codebook) {
    std::vector<QuantizedBlock> blocks;
    for (std::size_t start = 0; start < values.size(); start += codebook.block_size) {
        const std::size_t len = std::min(codebook.block_size, values.size() - start);
        blocks.push_back(nf4_quantize(values.subspan(start, len), codebook));
    }
    return blocks;
}

std::vector<double> nf4_dequantize_tensor(const std::vector<QuantizedBlock>& blocks, const Nf4Codebook& codebook) {
    std::vector<double> out;
    for (const auto& block : blocks) {
        auto values = nf4_dequantize(block, codebook);
        out.insert(out.end(), values.begin(), values.begin() + static_cast<std::ptrdiff_t>(block.valid_length));
    }
    return out;
}

float round_to_bf16(float value) {
    if (!std::isfinite(value)) {
        return value;
    }
    auto bits = std::bit_cast<std::uint32_t>(value);
    const std::uint32_t lsb = (bits >> 16) & 1U;
    bits += 0x7FFFU + lsb;
    bits &= 0xFFFF0000U;
    return std::bit_cast<float>(bits);
}

}  // namespace dialogtune::tune
