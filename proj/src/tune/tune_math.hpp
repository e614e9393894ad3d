// Copyright (c) 2026, dialogtune contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace dialogtune::tune {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// ---------------------------------------------------------------------------
// NF4 quantization

/// Sixteen ascending levels in [-1, 1] with exact -1, 0 and +1.
struct Nf4Codebook {
    std::array<double, 16> levels{};
    std::size_t block_size = 64;

    /// Quantile table used by QLoRA/bitsandbytes.
    static Nf4Codebook standard(std::size_t block_size = 64);
    /// Reads 16 whitespace-separated decimal values; '#' starts a comment.
    static Nf4Codebook from_file(const std::filesystem::path& path, std::size_t block_size = 64);

    /// Throws unless strictly ascending with endpoints +-1 and exactly one zero.
    void validate() const;
    std::uint8_t zero_index() const;
    double max_gap() const;
};

struct QuantizedBlock {
    std::vector<std::uint8_t> indices;  // size == block_size, each < 16
    double absmax = 0.0;
    std::size_t valid_length = 0;  // elements before zero padding
};

/// `block` may be shorter than block_size; it is zero-padded and the true
/// length recorded. Ties between two levels go to the lower index.
QuantizedBlock nf4_quantize(std::span<const double> block, const Nf4Codebook& codebook);

/// Returns block_size values (padding included).
std::vector<double> nf4_dequantize(const QuantizedBlock& block, const Nf4Codebook& codebook);

std::uint8_t nf4_nearest_index(double normalized, const Nf4Codebook& codebook);

std::vector<QuantizedBlock> nf4_quantize_tensor(std::span<const double> values, const Nf4Codebook& codebook);
/// Inverse of nf4_quantize_tensor; drops padding.
std::vector<double> nf4_dequantize_tensor(const std::vector<QuantizedBlock>& blocks, const Nf4Codebook& codebook);

/// Round-to-nearest-even truncation of a float32 to bfloat16 precision.
float round_to_bf16(float value);

// ---------------------------------------------------------------------------
// LoRA

struct LoraAdapter {
    Matrix down;  // A: rank x d_in
    Matrix up;    // B: d_out x rank
    int rank = 1;
    double alpha = 1.0;

    double scaling() const { return alpha / static_cast<double>(rank); }
    std::size_t parameter_count() const { return static_cast<std::size_t>(down.size() + up.size()); }

    /// A ~ U(-1/sqrt(d_in), 1/sqrt(d_in)) from the seed, B = 0.
    static LoraAdapter init(int d_in, int d_out, int rank, double alpha, std::uint64_t seed);
};

/// base_output + (alpha/r) * B * (A * x). Elements where the adapter term is
/// exactly zero are left untouched, so a zero-B adapter is bit-exact identity.
Vector lora_forward(const Vector& x, const Vector& base_output, const LoraAdapter& adapter);

struct LoraGradients {
    Matrix down;
    Matrix up;
    Vector input;  // adapter path only
};

/// Gradients of a scalar loss given dLoss/dOutput for one input.
LoraGradients lora_backward(const Vector& x, const Vector& grad_output, const LoraAdapter& adapter);

// ---------------------------------------------------------------------------
// NEFTune

enum class NoiseDistribution { kUniform, kGaussian };

struct NeftuneConfig {
    double noise_alpha = 5.0;
    NoiseDistribution distribution = NoiseDistribution::kUniform;
    std::uint64_t seed = 0;
};

/// Per-element scale alpha / sqrt(L * d). Uniform noise stays within
/// +-scale; Gaussian noise has standard deviation scale.
double neftune_scale(const NeftuneConfig& config, Eigen::Index length, Eigen::Index dim);

Matrix neftune_perturb(const Matrix& embeddings, const NeftuneConfig& config);

// ---------------------------------------------------------------------------
// DPO

struct DpoLossInputs {
    double policy_logprob_chosen = 0.0;
    double policy_logprob_rejected = 0.0;
    double reference_logprob_chosen = 0.0;
    double reference_logprob_rejected = 0.0;
    double beta = 0.1;
};

/// beta * ((pi_c - ref_c) - (pi_r - ref_r)).
double dpo_margin(const DpoLossInputs& inputs);

/// -log sigmoid(margin), computed as softplus(-margin).
double dpo_loss(const DpoLossInputs& inputs);

struct DpoLossGradient {
    double policy_chosen = 0.0;
    double policy_rejected = 0.0;
};

DpoLossGradient dpo_loss_gradient(const DpoLossInputs& inputs);

double softplus(double x);
double log_sigmoid(double x);
double sigmoid(double x);

// ---------------------------------------------------------------------------
// Gradient accumulation

struct AccumulationSpec {
    int micro_batch_size = 1;
    int accumulation_steps = 1;

    int effective_batch() const { return micro_batch_size * accumulation_steps; }
};

/// Mean of the k micro-batch gradients.
std::vector<double> accumulate_gradients(const std::vector<std::vector<double>>& micro_gradients,
                                         const AccumulationSpec& spec);

}  // namespace dialogtune::tune
