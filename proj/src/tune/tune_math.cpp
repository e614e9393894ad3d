// Copyright (c) 2026, dialogtune contributors
// SPDX-License-Identifier: Apache-2.0

#include "tune/tune_math.hpp"

#include <cmath>

#include "common/error.hpp"
#include "common/rng.hpp"

namespace dialogtune::tune {

LoraAdapter LoraAdapter::init(int d_in, int d_out, int rank, double alpha, std::uint64_t seed) {
    require(rank >= 1 && d_in >= 1 && d_out >= 1, ErrorCode::kInvalidArgument, "LoRA dimensions must be positive");
    require(alpha > 0.0, ErrorCode::kInvalidArgument, "LoRA alpha must be positive");
    LoraAdapter adapter;
    adapter.rank = rank;
    adapter.alpha = alpha;
    adapter.down.resize(rank, d_in);
    adapter.up = Matrix::Zero(d_out, rank);
    Rng rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(d_in));
    for (Eigen::Index i = 0; i < adapter.down.size(); ++i) {
        adapter.down.data()[i] = rng.uniform(-bound, bound);
    }
    return adapter;
}

namespace {

void check_shapes(const Vector& x, const LoraAdapter& adapter) {
    require(adapter.rank >= 1, ErrorCode::kInvalidArgument, "LoRA rank must be >= 1");
    require(adapter.down.rows() == adapter.rank && adapter.up.cols() == adapter.rank, ErrorCode::kInvalidArgument,
            "LoRA matrices disagree with rank");
    require(adapter.down.cols() == x.size(), ErrorCode::kInvalidArgument, "LoRA input dimension mismatch");
}

}  // namespace

Vector lora_forward(const Vector& x, const Vector& base_output, const LoraAdapter& adapter) {
    check_shapes(x, adapter);
    require(adapter.up.rows() == base_output.size(), ErrorCode::kInvalidArgument, "LoRA output dimension mismatch");
    const Vector delta = adapter.scaling() * (adapter.up * (adapter.down * x));
    Vector out = base_output;
    for (Eigen::Index i = 0; i < out.size(); ++i) {
        if (delta[i] != 0.0) {
            out[i] += delta[i];
        }
    }
    return out;
}

LoraGradients lora_backward(const Vector& x, const Vector& grad_output, const LoraAdapter& adapter) {
    check_shapes(x, adapter);
    require(adapter.up.rows() == grad_output.size(), ErrorCode::kInvalidArgument, "LoRA output dimension mismatch");
    const double s = adapter.scaling();
    const Vector hidden = adapter.down * x;                     // r
    const Vector grad_hidden = adapter.up.transpose() * grad_output;  // r
    LoraGradients g;
    g.up = s * grad_output * hidden.transpose();
    g.down = s * grad_hidden * x.transpose();
    g.input = s * adapter.down.transpose() * grad_hidden;
    return g;
}

double neftune_scale(const NeftuneConfig& config, Eigen::Index length, Eigen::Index dim) {
    return config.noise_alpha / std::sqrt(static_cast<double>(length) * static_cast<double>(dim));
}

Matrix neftune_perturb(const Matrix& embeddings, const NeftuneConfig& config) {
    require(embeddings.rows() >= 1 && embeddings.cols() >= 1, ErrorCode::kInvalidArgument,
            "NEFTune needs a non-empty embedding matrix");
    require(config.noise_alpha >= 0.0, ErrorCode::kInvalidArgument, "noise_alpha must be nonnegative");
    if (config.noise_alpha == 0.0) {
        return embeddings;
    }
    const double scale = neftune_scale(config, embeddings.rows(), embeddings.cols());
    Rng rng(config.seed);
    Matrix out = embeddings;
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
        for (Eigen::Index c = 0; c < out.cols(); ++c) {
            const double draw =
                config.distribution == NoiseDistribution::kUniform ? rng.uniform(-1.0, 1.0) : rng.normal();
            out(r, c) += scale * draw;
        }
    }
    return out;
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double log_sigmoid(double x) { return -softplus(-x); }

double sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double dpo_margin(const DpoLossInputs& in) {
    require(in.beta > 0.0, ErrorCode::kInvalidArgument, "DPO beta must be positive");
    return in.beta * ((in.policy_logprob_chosen - in.reference_logprob_chosen) -
                      (in.policy_logprob_rejected - in.reference_logprob_rejected));
}

double dpo_loss(const DpoLossInputs& inputs) { return softplus(-dpo_margin(inputs)); }

DpoLossGradient dpo_loss_gradient(const DpoLossInputs& inputs) {
    // d softplus(-z)/dz = -sigmoid(-z)
    const double dz = -sigmoid(-dpo_margin(inputs));
    return {inputs.beta * dz, -inputs.beta * dz};
}

std::vector<double> accumulate_gradients(const std::vector<std::vector<double>>& micro_gradients,
                                         const AccumulationSpec& spec) {
    require(spec.accumulation_steps >= 1 && spec.micro_batch_size >= 1, ErrorCode::kInvalidArgument,
            "accumulation spec must be positive");
    require(micro_gradients.size() == static_cast<std::size_t>(spec.accumulation_steps), ErrorCode::kInvalidArgument,
            "expected " + std::to_string(spec.accumulation_steps) + " micro-batch gradients, got " +
                std::to_string(micro_gradients.size()));
    const std::size_t dim = micro_gradients.front().size();
    std::vector<double> sum(dim, 0.0);
    for (const auto& g : micro_gradients) {
        require(g.size() == dim, ErrorCode::kInvalidArgument, "micro-batch gradient shape mismatch");
        for (std::size_t i = 0; i < dim; ++i) {
            sum[i] += g[i];
        }
    }
    const double k = static_cast<double>(micro_gradients.size());
    for (auto& v : sum) {
        v /= k;
    }
    return sum;
}

}  // namespace dialogtune::tune
