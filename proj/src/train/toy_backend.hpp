// Copyright (c) 2026, dialogtune contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "train/backend.hpp"

namespace dialogtune::train {

struct ToyShape {
    int embed_dim = 64;
    int hidden_dim = 128;
};

/// Parses "toy" or "toy-<embed>x<hidden>" (e.g. "toy-512x512").
ToyShape parse_toy_model_id(const std::string& base_model_id);

/// Self-contained two-layer language model over the 64-symbol character
/// vocabulary, for desk-scale runs and tests.
///
///   u_t     = e(x_t) + mean(e(x_s) for s < t in the same segment)
///   h_t     = tanh(W1 u_t + b1 + s1 B1 A1 u_t)
///   logit_t = W2 h_t + b2 + s2 B2 A2 h_t
///
/// Base weights (E, W1, b1, W2, b2) are generated deterministically from the
/// model id and stored at the requested precision. Adapters attach to the
/// "hidden" and/or "output" layers. Single-threaded and deterministic.
class ToyBackend final : public ModelBackend {
public:
    std::string name() const override { return "toy"; }
    Capabilities capabilities() const override { return {true, false, true}; }
    const dataset::Tokenizer& tokenizer() const override { return tokenizer_; }

    void load(const BackendLoadSpec& spec) override;
    bool loaded() const override { return loaded_; }
    void set_mode(Mode mode) override { mode_ = mode; }
    void set_neftune(std::optional<tune::NeftuneConfig> config) override { neftune_ = config; }
    void set_adapters_enabled(bool enabled) override { adapters_enabled_ = enabled; }

    ForwardResult forward_with_loss(std::span<const TrainingSequence> batch) override;
    void backward(std::span<const double> sequence_weights) override;
    std::vector<double> gradient() const override;
    void set_gradient(std::span<const double> gradient) override;
    void zero_grad() override;
    void optimizer_step(const AdamSettings& settings) override;

    std::vector<TokenId> sample(std::span<const TokenId> prompt, const serve::GenerationParams& params,
                                std::uint64_t seed, Deadline deadline) override;
    double sequence_logprob(const TrainingSequence& sequence) override;

    AdapterState save_adapter() const override;
    void load_adapter(const AdapterState& state) override;
    void reset_adapter(std::uint64_t seed) override;
    OptimizerState save_optimizer() const override { return optimizer_; }
    void load_optimizer(const OptimizerState& state) override;

    std::size_t trainable_parameter_count() const override;
    std::size_t total_parameter_count() const override;
    std::string base_weights_hash() const override;

    /// Number of forward_with_loss calls since load; lets tests observe
    /// that a resumed run did no work.
    std::size_t forward_calls() const { return forward_calls_; }

private:
    struct SequenceCache {
        tune::Matrix inputs;       // d x P
        tune::Matrix hidden;       // h x P
        tune::Matrix hidden_down;  // r x P, A1 * U
        tune::Matrix output_down;  // r x P, A2 * H
        tune::Matrix probs;        // V x P
        std::vector<TokenId> targets;
    };

    struct AdapterGrad {
        tune::Matrix down;
        tune::Matrix up;
    };

    void require_loaded() const;
    const tune::LoraAdapter* active(const std::string& layer) const;
    /// Fills inputs/targets for every labelled, in-segment prediction.
    void build_inputs(const TrainingSequence& seq, std::size_t sequence_index, SequenceCache& cache) const;
    void run_layers(SequenceCache& cache) const;
    tune::Vector next_token_logits(const tune::Vector& input) const;
    void round_activations(tune::Matrix& m) const;
    std::vector<double*> parameter_pointers();
    std::size_t adapter_size() const;

    dataset::CharTokenizer tokenizer_;
    BackendLoadSpec spec_;
    ToyShape shape_;
    bool loaded_ = false;
    Mode mode_ = Mode::kEval;
    std::optional<tune::NeftuneConfig> neftune_;
    bool adapters_enabled_ = true;

    // Stored base weights, in the load spec's precision.
    std::vector<std::vector<tune::QuantizedBlock>> quantized_;
    std::vector<std::vector<float>> stored_f32_;
    std::vector<std::vector<std::uint16_t>> stored_bf16_;

    // Compute copies.
    tune::Matrix embedding_;  // V x d
    tune::Matrix w1_;         // h x d
    tune::Vector b1_;
    tune::Matrix w2_;  // V x h
    tune::Vector b2_;

    std::map<std::string, tune::LoraAdapter> adapters_;
    std::map<std::string, AdapterGrad> grads_;
    OptimizerState optimizer_;

    std::vector<SequenceCache> caches_;
    std::size_t forward_calls_ = 0;
};

}  // namespace dialogtune::train
