// Copyright (c) 2026, dialogtune contributors
// SPDX-License-Identifier: Apache-2.0

#include "train/toy_backend.hpp"

#include <bit>
#include <cmath>
#include <regex>

#include "common/error.hpp"
#include "common/hash.hpp"
#include "common/rng.hpp"

namespace dialogtune::train {
namespace {

constexpr const char* kHidden = "hidden";
constexpr const char* kOutput = "output";

std::vector<double> flatten(const tune::Matrix& m) { return {m.data(), m.data() + m.size()}; }

void unflatten(const std::vector<double>& values, tune::Matrix& m) {
    std::copy(values.begin(), values.end(), m.data());
}

}  // namespace

ToyShape parse_toy_model_id(const std::string& base_model_id) {
    if (base_model_id == "toy") {
        return {};
    }
    static const std::regex pattern(R"(toy-(\d+)x(\d+))");
    std::smatch match;
    require(std::regex_match(base_model_id, match, pattern), ErrorCode::kConfig,
            "toy backend expects model id 'toy' or 'toy-<embed>x<hidden>', got '" + base_model_id + "'");
    ToyShape shape{std::stoi(match[1]), std::stoi(match[2])};
    require(shape.embed_dim >= 1 && shape.hidden_dim >= 1, ErrorCode::kConfig, "toy dimensions must be positive");
    return shape;
}

void ToyBackend::load(const BackendLoadSpec& spec) {
    require(!spec.flash_attention, ErrorCode::kBackend, "toy backend does not support flash attention");
    for (const auto& layer : spec.lora.target_layers) {
        require(layer == kHidden || layer == kOutput, ErrorCode::kConfig,
                "toy backend has no layer named '" + layer + "' (expected hidden or output)");
    }
    require(spec.lora.rank >= 1, ErrorCode::kConfig, "LoRA rank must be >= 1");
    spec_ = spec;
    shape_ = parse_toy_model_id(spec.base_model_id);
    const int vocab = tokenizer_.vocab_size();
    const int d = shape_.embed_dim;
    const int h = shape_.hidden_dim;

    // Deterministic "pretrained" weights keyed by the model id.
    Rng rng(stable_hash64(spec.base_model_id));
    auto gaussian = [&](Eigen::Index rows, Eigen::Index cols, double stddev) {
        tune::Matrix m(rows, cols);
        for (Eigen::Index i = 0; i < m.size(); ++i) {
            m.data()[i] = stddev * rng.normal();
        }
        return m;
    };
    tune::Matrix raw[] = {gaussian(vocab, d, 1.0), gaussian(h, d, 1.0 / std::sqrt(d)), tune::Matrix::Zero(h, 1),
                          gaussian(vocab, h, 1.0 / std::sqrt(h)), tune::Matrix::Zero(vocab, 1)};

    quantized_.clear();
    stored_f32_.clear();
    stored_bf16_.clear();
    const auto codebook = tune::Nf4Codebook::standard();
    for (auto& m : raw) {
        const auto values = flatten(m);
        std::vector<double> compute;
        switch (spec.weight_precision) {
            case WeightPrecision::kFourBitNf4: {
                quantized_.push_back(tune::nf4_quantize_tensor(values, codebook));
                compute = tune::nf4_dequantize_tensor(quantized_.back(), codebook);
                break;
            }
            case WeightPrecision::kSixteenBit: {
                std::vector<std::uint16_t> bits;
                for (double v : values) {
                    const float r = tune::round_to_bf16(static_cast<float>(v));
                    bits.push_back(static_cast<std::uint16_t>(std::bit_cast<std::uint32_t>(r) >> 16));
                    compute.push_back(r);
                }
                stored_bf16_.push_back(std::move(bits));
                break;
            }
            case WeightPrecision::kThirtyTwoBit: {
                std::vector<float> f(values.begin(), values.end());
                compute.assign(f.begin(), f.end());
                stored_f32_.push_back(std::move(f));
                break;
            }
        }
        unflatten(compute, m);
    }
    embedding_ = raw[0];
    w1_ = raw[1];
    b1_ = raw[2].col(0);
    w2_ = raw[3];
    b2_ = raw[4].col(0);

    loaded_ = true;
    mode_ = Mode::kEval;
    neftune_.reset();
    adapters_enabled_ = true;
    forward_calls_ = 0;
    reset_adapter(spec.seed);
}

void ToyBackend::require_loaded() const {
    require(loaded_, ErrorCode::kBackend, "toy backend used before load()");
}

void ToyBackend::reset_adapter(std::uint64_t seed) {
    require_loaded();
    adapters_.clear();
    grads_.clear();
    const int vocab = tokenizer_.vocab_size();
    std::uint64_t stream = 0;
    for (const auto& layer : spec_.lora.target_layers) {
        const int d_in = layer == kHidden ? shape_.embed_dim : shape_.hidden_dim;
        const int d_out = layer == kHidden ? shape_.hidden_dim : vocab;
        adapters_[layer] =
            tune::LoraAdapter::init(d_in, d_out, spec_.lora.rank, spec_.lora.alpha, derive_seed(seed, stream++));
    }
    for (const auto& [layer, adapter] : adapters_) {
        grads_[layer] = {tune::Matrix::Zero(adapter.down.rows(), adapter.down.cols()),
                         tune::Matrix::Zero(adapter.up.rows(), adapter.up.cols())};
    }
    optimizer_ = {std::vector<double>(adapter_size(), 0.0), std::vector<double>(adapter_size(), 0.0), 0};
}

const tune::LoraAdapter* ToyBackend::active(const std::string& layer) const {
    if (!adapters_enabled_) {
        return nullptr;
    }
    const auto it = adapters_.find(layer);
    return it == adapters_.end() ? nullptr : &it->second;
}

void ToyBackend::round_activations(tune::Matrix& m) const {
    if (spec_.compute_precision != ComputePrecision::kBrainFloat16) {
        return;
    }
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = tune::round_to_bf16(static_cast<float>(m.data()[i]));
    }
}

void ToyBackend::build_inputs(const TrainingSequence& seq, std::size_t sequence_index, SequenceCache& cache) const {
    const auto length = static_cast<Eigen::Index>(seq.tokens.size());
    require(seq.label_mask.size() == seq.tokens.size(), ErrorCode::kInvalidArgument,
            "label mask length differs from token count");
    const int d = shape_.embed_dim;

    tune::Matrix embedded(length, d);
    for (Eigen::Index t = 0; t < length; ++t) {
        const TokenId id = seq.tokens[static_cast<std::size_t>(t)];
        require(id >= 0 && id < tokenizer_.vocab_size(), ErrorCode::kInvalidArgument, "token id out of range");
        embedded.row(t) = embedding_.row(id);
    }
    if (mode_ == Mode::kTrain && neftune_ && neftune_->noise_alpha > 0.0 && length > 0) {
        tune::NeftuneConfig config = *neftune_;
        config.seed = derive_seed(neftune_->seed, sequence_index);
        embedded = tune::neftune_perturb(embedded, config);
    }

    std::vector<std::size_t> segment_start(seq.tokens.size(), 0);
    if (!seq.segments.empty()) {
        for (const auto& s : seq.segments) {
            require(s.start <= s.end && s.end <= seq.tokens.size(), ErrorCode::kInvalidArgument, "bad segment bounds");
            for (std::size_t t = s.start; t < s.end; ++t) {
                segment_start[t] = s.start;
            }
        }
    }

    std::vector<Eigen::Index> positions;
    cache.targets.clear();
    for (std::size_t t = 1; t < seq.tokens.size(); ++t) {
        if (seq.label_mask[t] != 0 && segment_start[t] == segment_start[t - 1] && t > segment_start[t]) {
            positions.push_back(static_cast<Eigen::Index>(t - 1));
            cache.targets.push_back(seq.tokens[t]);
        }
    }

    cache.inputs.resize(d, static_cast<Eigen::Index>(positions.size()));
    tune::Vector running = tune::Vector::Zero(d);
    std::size_t count = 0;
    std::size_t next = 0;
    for (Eigen::Index t = 0; t < length && next < positions.size(); ++t) {
        if (t == 0 || segment_start[static_cast<std::size_t>(t)] != segment_start[static_cast<std::size_t>(t - 1)]) {
            running.setZero();
            count = 0;
        }
        if (positions[next] == t) {
            tune::Vector u = embedded.row(t).transpose();
            if (count > 0) {
                u += running / static_cast<double>(count);
            }
            cache.inputs.col(static_cast<Eigen::Index>(next)) = u;
            ++next;
        }
        running += embedded.row(t).transpose();
        ++count;
    }
}

void ToyBackend::run_layers(SequenceCache& cache) const {
    const Eigen::Index p = cache.inputs.cols();
    tune::Matrix pre = w1_ * cache.inputs;
    pre.colwise() += b1_;
    if (const auto* a = active(kHidden)) {
        cache.hidden_down = a->down * cache.inputs;
        pre += a->scaling() * (a->up * cache.hidden_down);
    }
    round_activations(pre);
    cache.hidden = pre.array().tanh().matrix();

    tune::Matrix logits = w2_ * cache.hidden;
    logits.colwise() += b2_;
    if (const auto* a = active(kOutput)) {
        cache.output_down = a->down * cache.hidden;
        logits += a->scaling() * (a->up * cache.output_down);
    }
    round_activations(logits);

    cache.probs.resize(logits.rows(), p);
    for (Eigen::Index j = 0; j < p; ++j) {
        const double top = logits.col(j).maxCoeff();
        const auto e = (logits.col(j).array() - top).exp();
        cache.probs.col(j) = (e / e.sum()).matrix();
    }
}

ForwardResult ToyBackend::forward_with_loss(std::span<const TrainingSequence> batch) {
    require_loaded();
    ++forward_calls_;
    caches_.assign(batch.size(), {});
    ForwardResult result;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        auto& cache = caches_[i];
        build_inputs(batch[i], i, cache);
        run_layers(cache);
        double nll = 0.0;
        for (std::size_t j = 0; j < cache.targets.size(); ++j) {
            nll -= std::log(std::max(cache.probs(cache.targets[j], static_cast<Eigen::Index>(j)), 1e-300));
        }
        result.nll_sum.push_back(nll);
        result.label_counts.push_back(cache.targets.size());
    }
    return result;
}

void ToyBackend::backward(std::span<const double> sequence_weights) {
    require_loaded();
    require(sequence_weights.size() == caches_.size(), ErrorCode::kInvalidArgument,
            "backward weights do not match the last forward batch");
    const auto* hidden_adapter = active(kHidden);
    const auto* output_adapter = active(kOutput);
    for (std::size_t i = 0; i < caches_.size(); ++i) {
        const auto& cache = caches_[i];
        if (cache.targets.empty() || sequence_weights[i] == 0.0) {
            continue;
        }
        tune::Matrix g = cache.probs;
        for (std::size_t j = 0; j < cache.targets.size(); ++j) {
            g(cache.targets[j], static_cast<Eigen::Index>(j)) -= 1.0;
        }
        g *= sequence_weights[i];

        tune::Matrix grad_hidden = w2_.transpose() * g;
        if (output_adapter != nullptr) {
            const double s = output_adapter->scaling();
            const tune::Matrix up_t_g = output_adapter->up.transpose() * g;
            auto& ga = grads_[kOutput];
            ga.up += s * g * cache.output_down.transpose();
            ga.down += s * up_t_g * cache.hidden.transpose();
            grad_hidden += s * output_adapter->down.transpose() * up_t_g;
        }
        if (hidden_adapter != nullptr) {
            const double s = hidden_adapter->scaling();
            const tune::Matrix grad_pre =
                (grad_hidden.array() * (1.0 - cache.hidden.array().square())).matrix();
            const tune::Matrix up_t_g = hidden_adapter->up.transpose() * grad_pre;
            auto& ga = grads_[kHidden];
            ga.up += s * grad_pre * cache.hidden_down.transpose();
            ga.down += s * up_t_g * cache.inputs.transpose();
        }
    }
}

std::size_t ToyBackend::adapter_size() const {
    std::size_t n = 0;
    for (const auto& [layer, adapter] : adapters_) {
        n += adapter.parameter_count();
    }
    return n;
}

std::vector<double> ToyBackend::gradient() const {
    std::vector<double> out;
    out.reserve(adapter_size());
    for (const auto& [layer, g] : grads_) {
        out.insert(out.end(), g.down.data(), g.down.data() + g.down.size());
        out.insert(out.end(), g.up.data(), g.up.data() + g.up.size());
    }
    return out;
}

void ToyBackend::set_gradient(std::span<const double> gradient) {
    require(gradient.size() == adapter_size(), ErrorCode::kInvalidArgument, "gradient size mismatch");
    std::size_t offset = 0;
    for (auto& [layer, g] : grads_) {
        for (tune::Matrix* m : {&g.down, &g.up}) {
            std::copy_n(gradient.begin() + static_cast<std::ptrdiff_t>(offset), m->size(), m->data());
            offset += static_cast<std::size_t>(m->size());
        }
    }
}

void ToyBackend::zero_grad() {
    for (auto& [layer, g] : grads_) {
        g.down.setZero();
        g.up.setZero();
    }
}

std::vector<double*> ToyBackend::parameter_pointers() {
    std::vector<double*> out;
    for (auto& [layer, adapter] : adapters_) {
        for (tune::Matrix* m : {&adapter.down, &adapter.up}) {
            for (Eigen::Index i = 0; i < m->size(); ++i) {
                out.push_back(m->data() + i);
            }
        }
    }
    return out;
}

void ToyBackend::optimizer_step(const AdamSettings& settings) {
    require_loaded();
    const auto params = parameter_pointers();
    const auto grad = gradient();
    require(optimizer_.first_moment.size() == params.size(), ErrorCode::kBackend, "optimizer state size mismatch");
    optimizer_.step += 1;
    const double t = static_cast<double>(optimizer_.step);
    const double correction1 = 1.0 - std::pow(settings.beta1, t);
    const double correction2 = 1.0 - std::pow(settings.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& m = optimizer_.first_moment[i];
        auto& v = optimizer_.second_moment[i];
        m = settings.beta1 * m + (1.0 - settings.beta1) * grad[i];
        v = settings.beta2 * v + (1.0 - settings.beta2) * grad[i] * grad[i];
        const double update = (m / correction1) / (std::sqrt(v / correction2) + settings.epsilon);
        *params[i] -= settings.learning_rate * (update + settings.weight_decay * *params[i]);
    }
}

tune::Vector ToyBackend::next_token_logits(const tune::Vector& input) const {
    SequenceCache cache;
    cache.inputs = input;
    run_layers(cache);
    // run_layers returns probabilities; log recovers logits up to a constant.
    return cache.probs.col(0).array().max(1e-300).log().matrix();
}

std::vector<TokenId> ToyBackend::sample(std::span<const TokenId> prompt, const serve::GenerationParams& params,
                                        std::uint64_t seed, Deadline deadline) {
    require_loaded();
    serve::validate(params);
    require(!prompt.empty(), ErrorCode::kInvalidArgument, "empty prompt");
    const Mode saved = mode_;
    mode_ = Mode::kEval;

    Rng rng(seed);
    tune::Vector running = tune::Vector::Zero(shape_.embed_dim);
    for (std::size_t i = 0; i + 1 < prompt.size(); ++i) {
        running += embedding_.row(prompt[i]).transpose();
    }
    std::size_t count = prompt.size() - 1;
    TokenId last = prompt.back();
    std::vector<TokenId> out;
    while (static_cast<int>(out.size()) < params.max_new_tokens) {
        if (deadline && std::chrono::steady_clock::now() > *deadline) {
            mode_ = saved;
            fail(ErrorCode::kTimeout, "generation exceeded its deadline");
        }
        tune::Vector u = embedding_.row(last).transpose();
        if (count > 0) {
            u += running / static_cast<double>(count);
        }
        const tune::Vector logits = next_token_logits(u);
        const auto probs = serve::filter_logits(std::span<const double>(logits.data(), logits.size()), params);
        const auto next = static_cast<TokenId>(serve::sample_index(probs, rng));
        if (next == tokenizer_.stop_id() || next == dataset::CharTokenizer::kEndOfText) {
            break;
        }
        out.push_back(next);
        running += embedding_.row(last).transpose();
        ++count;
        last = next;
    }
    mode_ = saved;
    return out;
}

double ToyBackend::sequence_logprob(const TrainingSequence& sequence) {
    require_loaded();
    const Mode saved = mode_;
    mode_ = Mode::kEval;
    SequenceCache cache;
    build_inputs(sequence, 0, cache);
    run_layers(cache);
    mode_ = saved;
    double total = 0.0;
    for (std::size_t j = 0; j < cache.targets.size(); ++j) {
        total += std::log(std::max(cache.probs(cache.targets[j], static_cast<Eigen::Index>(j)), 1e-300));
    }
    return total;
}

AdapterState ToyBackend::save_adapter() const {
    AdapterState state;
    state.rank = spec_.lora.rank;
    state.alpha = spec_.lora.alpha;
    for (const auto& [layer, adapter] : adapters_) {
        state.tensors[layer + ".down"] = adapter.down;
        state.tensors[layer + ".up"] = adapter.up;
    }
    return state;
}

void ToyBackend::load_adapter(const AdapterState& state) {
    require_loaded();
    require(state.rank == spec_.lora.rank && state.alpha == spec_.lora.alpha, ErrorCode::kBackend,
            "adapter rank/alpha differ from the loaded LoRA settings");
    require(state.tensors.size() == 2 * adapters_.size(), ErrorCode::kBackend, "adapter targets differ");
    for (auto& [layer, adapter] : adapters_) {
        const auto down = state.tensors.find(layer + ".down");
        const auto up = state.tensors.find(layer + ".up");
        require(down != state.tensors.end() && up != state.tensors.end(), ErrorCode::kBackend,
                "adapter is missing layer " + layer);
        require(down->second.rows() == adapter.down.rows() && down->second.cols() == adapter.down.cols() &&
                    up->second.rows() == adapter.up.rows() && up->second.cols() == adapter.up.cols(),
                ErrorCode::kBackend, "adapter shape mismatch on layer " + layer);
        adapter.down = down->second;
        adapter.up = up->second;
    }
    zero_grad();
}

void ToyBackend::load_optimizer(const OptimizerState& state) {
    require(state.first_moment.size() == adapter_size() && state.second_moment.size() == adapter_size(),
            ErrorCode::kBackend, "optimizer state does not match adapter size");
    optimizer_ = state;
}

std::size_t ToyBackend::trainable_parameter_count() const { return adapter_size(); }

std::size_t ToyBackend::total_parameter_count() const {
    const auto base = static_cast<std::size_t>(embedding_.size() + w1_.size() + b1_.size() + w2_.size() + b2_.size());
    return base + adapter_size();
}

std::string ToyBackend::base_weights_hash() const {
    require_loaded();
    Sha256 hasher;
    for (const auto& blocks : quantized_) {
        for (const auto& block : blocks) {
            hasher.update(std::as_bytes(std::span(block.indices)));
            hasher.update(std::as_bytes(std::span(&block.absmax, 1)));
        }
    }
    for (const auto& values : stored_f32_) {
        hasher.update(std::as_bytes(std::span(values)));
    }
    for (const auto& values : stored_bf16_) {
        hasher.update(std::as_bytes(std::span(values)));
    }
    for (const tune::Matrix* m : {&embedding_, &w1_, &w2_}) {
        hasher.update(std::as_bytes(std::span(m->data(), static_cast<std::size_t>(m->size()))));
    }
    for (const tune::Vector* v : {&b1_, &b2_}) {
        hasher.update(std::as_bytes(std::span(v->data(), static_cast<std::size_t>(v->size()))));
    }
    return hasher.hex_digest();
}

}  // namespace dialogtune::train
