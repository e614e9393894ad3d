// Copyright (c) 2026, dialogtune contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dataset/dataset.hpp"
#include "dataset/tokenizer.hpp"
#include "serve/sampling.hpp"
#include "tune/tune_math.hpp"

namespace dialogtune::train {

using dataset::TokenId;

struct Capabilities {
    bool supports_4bit = false;
    bool supports_flash_attention = false;
    bool supports_logprob_scoring = false;
};

enum class WeightPrecision { kFourBitNf4, kSixteenBit, kThirtyTwoBit };
enum class ComputePrecision { kBrainFloat16, kFloat32 };

struct LoraSettings {
    int rank = 8;
    double alpha = 16.0;
    std::vector<std::string> target_layers = {"hidden", "output"};

    bool operator==(const LoraSettings&) const = default;
};

struct BackendLoadSpec {
    std::string base_model_id;
    WeightPrecision weight_precision = WeightPrecision::kFourBitNf4;
    ComputePrecision compute_precision = ComputePrecision::kFloat32;
    LoraSettings lora;
    bool flash_attention = false;
    std::uint64_t seed = 0;  // adapter initialization
};

/// One training row. label_mask[t] == 1 means token t is predicted from the
/// tokens before it; prediction never crosses a segment boundary.
struct TrainingSequence {
    std::vector<TokenId> tokens;
    std::vector<std::uint8_t> label_mask;
    std::vector<dataset::Segment> segments;  // empty means one segment

    std::size_t label_count() const;
};

TrainingSequence from_packed(const dataset::PackedExample& packed);

/// Prompt tokens label-masked, response tokens (plus the closing marker)
/// as targets.
TrainingSequence sequence_for_pair(const std::string& prompt, const std::string& response,
                                   const dataset::Tokenizer& tokenizer, const dataset::ChatTemplate& chat_template,
                                   std::size_t max_len, const std::optional<std::string>& system_prompt = std::nullopt);

struct ForwardResult {
    std::vector<double> nll_sum;            // per sequence, over labelled tokens
    std::vector<std::size_t> label_counts;  // per sequence
};

enum class Mode { kTrain, kEval };

/// Adapter parameters by name, e.g. "hidden.down".
struct AdapterState {
    std::map<std::string, tune::Matrix> tensors;
    int rank = 0;
    double alpha = 0.0;
};

struct OptimizerState {
    std::vector<double> first_moment;
    std::vector<double> second_moment;
    std::int64_t step = 0;
};

struct AdamSettings {
    double learning_rate = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.0;
};

/// A model runtime. Base weights are frozen; only adapter parameters train.
class ModelBackend {
public:
    virtual ~ModelBackend() = default;

    virtual std::string name() const = 0;
    virtual Capabilities capabilities() const = 0;
    virtual const dataset::Tokenizer& tokenizer() const = 0;

    virtual void load(const BackendLoadSpec& spec) = 0;
    virtual bool loaded() const = 0;
    virtual void set_mode(Mode mode) = 0;
    /// Noise applied to input embeddings in training mode only.
    virtual void set_neftune(std::optional<tune::NeftuneConfig> config) = 0;
    virtual void set_adapters_enabled(bool enabled) = 0;

    virtual ForwardResult forward_with_loss(std::span<const TrainingSequence> batch) = 0;
    /// Adds d(sum_i weights[i] * nll_sum[i]) / d(adapter) for the last
    /// forward pass into the gradient buffer.
    virtual void backward(std::span<const double> sequence_weights) = 0;
    virtual std::vector<double> gradient() const = 0;
    virtual void set_gradient(std::span<const double> gradient) = 0;
    virtual void zero_grad() = 0;
    virtual void optimizer_step(const AdamSettings& settings) = 0;

    using Deadline = std::optional<std::chrono::steady_clock::time_point>;
    /// Generates up to params.max_new_tokens tokens after `prompt`; the stop
    /// token is not included. Throws Error(kTimeout) past the deadline.
    virtual std::vector<TokenId> sample(std::span<const TokenId> prompt, const serve::GenerationParams& params,
                                        std::uint64_t seed, Deadline deadline = std::nullopt) = 0;
    /// Sum of label-masked token log-probabilities, eval mode.
    virtual double sequence_logprob(const TrainingSequence& sequence) = 0;

    virtual AdapterState save_adapter() const = 0;
    virtual void load_adapter(const AdapterState& state) = 0;
    virtual void reset_adapter(std::uint64_t seed) = 0;
    virtual OptimizerState save_optimizer() const = 0;
    virtual void load_optimizer(const OptimizerState& state) = 0;

    virtual std::size_t trainable_parameter_count() const = 0;
    virtual std::size_t total_parameter_count() const = 0;
    /// Digest of the stored (frozen) base weights.
    virtual std::string base_weights_hash() const = 0;
};

/// "toy" is built in; other names throw Error(kUnavailable).
std::unique_ptr<ModelBackend> make_backend(const std::string& name);

// Checkpoint layout: <dir>/adapter.bin, <dir>/optimizer.bin, <dir>/adapter.json
void save_adapter_file(const std::filesystem::path& path, const AdapterState& state);
AdapterState load_adapter_file(const std::filesystem::path& path);
void save_optimizer_file(const std::filesystem::path& path, const OptimizerState& state);
OptimizerState load_optimizer_file(const std::filesystem::path& path);

struct CheckpointMetadata {
    std::string run_id;
    std::string config_hash;
    std::int64_t step = 0;
    std::string kind;
};

void save_checkpoint(const std::filesystem::path& dir, const ModelBackend& backend, const CheckpointMetadata& meta);
CheckpointMetadata read_checkpoint_metadata(const std::filesystem::path& dir);
/// Loads the adapter (and optimizer state when `with_optimizer`).
void load_checkpoint(const std::filesystem::path& dir, ModelBackend& backend, bool with_optimizer = false);

}  // namespace dialogtune::train
