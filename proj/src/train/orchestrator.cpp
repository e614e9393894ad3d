// Copyright (c) 2026, dialogtune contributors
// SPDX-License-Identifier: Apache-2.0

#include "train/orchestrator.hpp"

#include <chrono>
#include <cmath>
#include <map>
#include <numeric>

#include "common/error.hpp"
#include "common/hash.hpp"
#include "common/rng.hpp"

namespace dialogtune::train {
namespace {

/// Epoch-wise seeded permutations, so batch composition depends only on
/// (seed, step) and a resumed run sees the same data.
class BatchSchedule {
public:
    BatchSchedule(std::size_t size, std::uint64_t seed) : size_(size), seed_(seed) {}

    std::size_t index(std::size_t global) {
        const std::size_t epoch = global / size_;
        auto it = permutations_.find(epoch);
        if (it == permutations_.end()) {
            std::vector<std::size_t> perm(size_);
            std::iota(perm.begin(), perm.end(), std::size_t{0});
            Rng rng(derive_seed(seed_, epoch));
            rng.shuffle(std::span<std::size_t>(perm));
            it = permutations_.emplace(epoch, std::move(perm)).first;
        }
        return it->second[global % size_];
    }

private:
    std::size_t size_;
    std::uint64_t seed_;
    std::map<std::size_t, std::vector<std::size_t>> permutations_;
};

std::string checkpoint_name(int step) {
    std::string digits = std::to_string(step);
    return "step-" + std::string(digits.size() < 6 ? 6 - digits.size() : 0, '0') + digits;
}

void emit(ManifestWriter& writer, const RunOptions& options, Json record) {
    writer.append(record);
    if (options.on_record) {
        options.on_record(record);
    }
}

/// Shared run scaffolding for SFT and DPO: reuse/resume decisions, backend
/// preparation, checkpointing and completion records.
class RunContext {
public:
    RunContext(std::string kind, std::string run_id, const TrainConfig& config, const DatasetInfo& data,
               ModelBackend& backend, const RunOptions& options)
        : kind_(std::move(kind)), run_id_(std::move(run_id)), config_(config), data_(data), backend_(backend),
          options_(options), dir_(options.runs_dir / run_id_) {}

    const std::filesystem::path& dir() const { return dir_; }

    /// Returns the completed manifest when there is nothing to do.
    std::optional<RunManifest> prepare(const std::function<void()>& initialize_adapter) {
        if (manifest_exists(dir_)) {
            RunManifest existing = load_manifest(dir_);
            if (existing.completed) {
                existing.reused_completed = true;
                return existing;
            }
            backend_.load(load_spec(config_));
            base_hash_ = backend_.base_weights_hash();
            initialize_adapter();
            writer_ = std::make_unique<ManifestWriter>(dir_);
            if (const auto ckpt = existing.latest_checkpoint()) {
                load_checkpoint(ckpt->path, backend_, true);
                start_step_ = ckpt->step;
            }
            emit(*writer_, options_, {{"type", "resume"}, {"from_step", start_step_}});
            return std::nullopt;
        }
        std::filesystem::create_directories(dir_);
        backend_.load(load_spec(config_));
        base_hash_ = backend_.base_weights_hash();
        initialize_adapter();
        writer_ = std::make_unique<ManifestWriter>(dir_);
        emit(*writer_, options_,
             {{"type", "start"},
              {"run_id", run_id_},
              {"kind", kind_},
              {"config", to_json(config_)},
              {"config_hash", config_hash(config_)},
              {"dataset_hash", data_.hash},
              {"seed", config_.seed},
              {"neftune_seed", config_.neftune.seed},
              {"trainable_parameters", backend_.trainable_parameter_count()},
              {"total_parameters", backend_.total_parameter_count()},
              {"base_weights_hash", base_hash_}});
        return std::nullopt;
    }

    int start_step() const { return start_step_; }

    void record(Json rec) { emit(*writer_, options_, std::move(rec)); }

    void checkpoint(int step) {
        const auto path = dir_ / "checkpoints" / checkpoint_name(step);
        save_checkpoint(path, backend_, {run_id_, config_hash(config_), step, kind_});
        record({{"type", "checkpoint"}, {"step", step}, {"path", path.string()}});
    }

    [[noreturn]] void abort(const std::string& reason) {
        record({{"type", "aborted"}, {"reason", reason}});
        fail(ErrorCode::kNumeric, kind_ + " run " + run_id_ + " aborted: " + reason);
    }

    RunManifest complete(double seconds) {
        const std::string after = backend_.base_weights_hash();
        if (after != base_hash_) {
            abort("base weights changed during training");
        }
        record({{"type", "complete"}, {"duration_seconds", seconds}, {"base_weights_hash", after}});
        return load_manifest(dir_);
    }

private:
    std::string kind_;
    std::string run_id_;
    const TrainConfig& config_;
    const DatasetInfo& data_;
    ModelBackend& backend_;
    const RunOptions& options_;
    std::filesystem::path dir_;
    std::unique_ptr<ManifestWriter> writer_;
    std::string base_hash_;
    int start_step_ = 0;
};

void check_dataset(const TrainConfig& config, const DatasetInfo& data, std::span<const TrainingSequence> seqs) {
    require(config.max_sequence_length == data.max_sequence_length, ErrorCode::kConfig,
            "max_sequence_length " + std::to_string(config.max_sequence_length) +
                " differs from the dataset manifest's " + std::to_string(data.max_sequence_length));
    for (const auto& s : seqs) {
        require(s.tokens.size() <= config.max_sequence_length, ErrorCode::kInvalidArgument,
                "training sequence longer than max_sequence_length");
    }
}

bool all_finite(const std::vector<double>& values) {
    return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

void set_training_noise(ModelBackend& backend, const TrainConfig& config, int step) {
    if (config.neftune.noise_alpha > 0.0) {
        tune::NeftuneConfig noise = config.neftune;
        noise.seed = derive_seed(config.neftune.seed, static_cast<std::uint64_t>(step));
        backend.set_neftune(noise);
    } else {
        backend.set_neftune(std::nullopt);
    }
}

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

void check_capabilities(const TrainConfig& config, const ModelBackend& backend, bool needs_logprob_scoring) {
    const Capabilities caps = backend.capabilities();
    std::vector<std::string> missing;
    if (config.weight_precision == WeightPrecision::kFourBitNf4 && !caps.supports_4bit) {
        missing.emplace_back("4-bit weights");
    }
    if (config.flash_attention && !caps.supports_flash_attention) {
        missing.emplace_back("flash attention");
    }
    if (needs_logprob_scoring && !caps.supports_logprob_scoring) {
        missing.emplace_back("sequence log-probability scoring");
    }
    if (!missing.empty()) {
        std::string joined;
        for (const auto& m : missing) {
            joined += (joined.empty() ? "" : ", ") + m;
        }
        throw Error(ErrorCode::kBackend, "backend '" + backend.name() + "' lacks required capability: " + joined,
                    missing);
    }
}

std::string sft_run_id(const TrainConfig& config, const DatasetInfo& data) {
    return "sft-" + sha256_hex("sft\n" + canonical_form(config) + "\n" + data.hash).substr(0, 16);
}

std::string dpo_run_id(const TrainConfig& config, const DatasetInfo& data, const std::string& reference_id) {
    return "dpo-" + sha256_hex("dpo\n" + canonical_form(config) + "\n" + data.hash + "\n" + reference_id).substr(0, 16);
}

double mean_sequence_loss(const ForwardResult& forward) {
    double total = 0.0;
    std::size_t counted = 0;
    for (std::size_t i = 0; i < forward.nll_sum.size(); ++i) {
        if (forward.label_counts[i] > 0) {
            total += forward.nll_sum[i] / static_cast<double>(forward.label_counts[i]);
            ++counted;
        }
    }
    return counted == 0 ? 0.0 : total / static_cast<double>(counted);
}

double evaluate_loss(const std::optional<std::filesystem::path>& checkpoint,
                     std::span<const TrainingSequence> dataset, ModelBackend& backend) {
    require(!dataset.empty(), ErrorCode::kInvalidArgument, "cannot evaluate on an empty dataset");
    if (checkpoint) {
        load_checkpoint(*checkpoint, backend);
    }
    backend.set_mode(Mode::kEval);
    // Bounded chunks keep activation caches small.
    constexpr std::size_t kChunk = 32;
    double total = 0.0;
    std::size_t counted = 0;
    for (std::size_t start = 0; start < dataset.size(); start += kChunk) {
        const auto chunk = dataset.subspan(start, std::min(kChunk, dataset.size() - start));
        const ForwardResult f = backend.forward_with_loss(chunk);
        for (std::size_t i = 0; i < chunk.size(); ++i) {
            if (f.label_counts[i] > 0) {
                total += f.nll_sum[i] / static_cast<double>(f.label_counts[i]);
                ++counted;
            }
        }
    }
    require(counted > 0, ErrorCode::kInvalidArgument, "dataset has no labelled tokens");
    return total / static_cast<double>(counted);
}

RunManifest run_sft(const TrainConfig& config, std::span<const TrainingSequence> train_set,
                    std::span<const TrainingSequence> validation_set, const DatasetInfo& data,
                    ModelBackend& backend, const RunOptions& options) {
    check_capabilities(config, backend, false);
    require(!train_set.empty(), ErrorCode::kInvalidArgument, "empty training set");
    check_dataset(config, data, train_set);
    check_dataset(config, data, validation_set);

    RunContext run("sft", sft_run_id(config, data), config, data, backend, options);
    if (auto done = run.prepare([&] { backend.reset_adapter(config.seed); })) {
        return *done;
    }

    const auto started = std::chrono::steady_clock::now();
    const auto micro = static_cast<std::size_t>(config.accumulation.micro_batch_size);
    const auto k = static_cast<std::size_t>(config.accumulation.accumulation_steps);
    BatchSchedule schedule(train_set.size(), config.seed);

    for (int step = run.start_step() + 1; step <= config.max_steps; ++step) {
        backend.set_mode(Mode::kTrain);
        set_training_noise(backend, config, step);
        std::vector<std::vector<double>> micro_grads;
        double step_loss = 0.0;
        for (std::size_t m = 0; m < k; ++m) {
            std::vector<TrainingSequence> batch;
            for (std::size_t j = 0; j < micro; ++j) {
                const std::size_t global = ((static_cast<std::size_t>(step) - 1) * k + m) * micro + j;
                batch.push_back(train_set[schedule.index(global)]);
            }
            backend.zero_grad();
            const ForwardResult f = backend.forward_with_loss(batch);
            if (!all_finite(f.nll_sum)) {
                run.abort("non-finite loss at step " + std::to_string(step));
            }
            std::size_t counted = 0;
            for (auto c : f.label_counts) {
                counted += c > 0 ? 1 : 0;
            }
            std::vector<double> weights(batch.size(), 0.0);
            for (std::size_t i = 0; i < batch.size(); ++i) {
                if (f.label_counts[i] > 0) {
                    weights[i] = 1.0 / (static_cast<double>(f.label_counts[i]) * static_cast<double>(counted));
                }
            }
            backend.backward(weights);
            micro_grads.push_back(backend.gradient());
            step_loss += mean_sequence_loss(f) / static_cast<double>(k);
        }
        backend.set_gradient(tune::accumulate_gradients(micro_grads, config.accumulation));
        const double lr = scheduled_learning_rate(config.optimizer, step, config.max_steps);
        backend.optimizer_step(adam_settings(config.optimizer, lr));
        run.record({{"type", "step"}, {"step", step}, {"loss", step_loss}, {"learning_rate", lr}});

        const bool last = step == config.max_steps;
        if (!validation_set.empty() && (step % config.eval_every == 0 || last)) {
            const double val = evaluate_loss(std::nullopt, validation_set, backend);
            if (!std::isfinite(val)) {
                run.abort("non-finite validation loss at step " + std::to_string(step));
            }
            run.record({{"type", "eval"}, {"step", step}, {"loss", val}});
        }
        if (step % config.checkpoint_every == 0 || last) {
            run.checkpoint(step);
        }
    }
    backend.set_neftune(std::nullopt);
    backend.set_mode(Mode::kEval);
    return run.complete(seconds_since(started));
}

PreferenceMetrics evaluate_preferences(std::span<const PreferenceExample> preferences,
                                       std::span<const double> reference_chosen,
                                       std::span<const double> reference_rejected, double beta,
                                       ModelBackend& backend) {
    require(!preferences.empty(), ErrorCode::kInvalidArgument, "no preference records to evaluate");
    PreferenceMetrics metrics;
    std::size_t wins = 0;
    for (std::size_t i = 0; i < preferences.size(); ++i) {
        const tune::DpoLossInputs in{backend.sequence_logprob(preferences[i].chosen),
                                     backend.sequence_logprob(preferences[i].rejected), reference_chosen[i],
                                     reference_rejected[i], beta};
        metrics.mean_loss += tune::dpo_loss(in);
        wins += tune::dpo_margin(in) > 0.0 ? 1 : 0;
    }
    metrics.mean_loss /= static_cast<double>(preferences.size());
    metrics.accuracy = static_cast<double>(wins) / static_cast<double>(preferences.size());
    return metrics;
}

RunManifest run_dpo(const TrainConfig& config, std::span<const PreferenceExample> preferences,
                    const std::filesystem::path& sft_checkpoint, const DatasetInfo& data, ModelBackend& backend,
                    const RunOptions& options) {
    check_capabilities(config, backend, true);
    require(!preferences.empty(), ErrorCode::kInvalidArgument, "empty preference set");
    for (const auto& p : preferences) {
        check_dataset(config, data, std::span<const TrainingSequence>(&p.chosen, 1));
        check_dataset(config, data, std::span<const TrainingSequence>(&p.rejected, 1));
    }

    const std::string reference_id =
        sft_checkpoint.empty() ? "init" : sha256_file(sft_checkpoint / "adapter.bin");
    RunContext run("dpo", dpo_run_id(config, data, reference_id), config, data, backend, options);
    const auto initialize = [&] {
        backend.reset_adapter(config.seed);
        if (!sft_checkpoint.empty()) {
            load_checkpoint(sft_checkpoint, backend);
        }
    };
    if (auto done = run.prepare(initialize)) {
        return *done;
    }

    // Reference log-probabilities: computed once from the SFT adapter, cached
    // on disk so a resumed run does not need the reference weights again.
    std::vector<double> ref_chosen;
    std::vector<double> ref_rejected;
    const auto ref_path = run.dir() / "reference_logprobs.jsonl";
    if (std::filesystem::exists(ref_path)) {
        for (const auto& row : read_jsonl(ref_path)) {
            ref_chosen.push_back(row.at("chosen").get<double>());
            ref_rejected.push_back(row.at("rejected").get<double>());
        }
        require(ref_chosen.size() == preferences.size(), ErrorCode::kIo, "reference log-prob cache is incomplete");
    } else {
        const AdapterState current = backend.save_adapter();
        initialize();
        std::vector<Json> rows;
        for (const auto& p : preferences) {
            ref_chosen.push_back(backend.sequence_logprob(p.chosen));
            ref_rejected.push_back(backend.sequence_logprob(p.rejected));
            rows.push_back({{"chosen", ref_chosen.back()}, {"rejected", ref_rejected.back()}});
        }
        write_jsonl(ref_path, rows);
        backend.load_adapter(current);
    }

    const double beta = config.dpo_beta;
    if (run.start_step() == 0) {
        const auto metrics = evaluate_preferences(preferences, ref_chosen, ref_rejected, beta, backend);
        run.record({{"type", "eval"}, {"step", 0}, {"loss", metrics.mean_loss},
                    {"preference_accuracy", metrics.accuracy}});
    }

    const auto started = std::chrono::steady_clock::now();
    const auto micro = static_cast<std::size_t>(config.accumulation.micro_batch_size);
    const auto k = static_cast<std::size_t>(config.accumulation.accumulation_steps);
    BatchSchedule schedule(preferences.size(), config.seed);

    for (int step = run.start_step() + 1; step <= config.max_steps; ++step) {
        backend.set_mode(Mode::kTrain);
        set_training_noise(backend, config, step);
        std::vector<std::vector<double>> micro_grads;
        double step_loss = 0.0;
        for (std::size_t m = 0; m < k; ++m) {
            std::vector<std::size_t> picked;
            std::vector<TrainingSequence> batch;
            for (std::size_t j = 0; j < micro; ++j) {
                const std::size_t global = ((static_cast<std::size_t>(step) - 1) * k + m) * micro + j;
                picked.push_back(schedule.index(global));
                batch.push_back(preferences[picked.back()].chosen);
            }
            for (std::size_t idx : picked) {
                batch.push_back(preferences[idx].rejected);
            }
            backend.zero_grad();
            const ForwardResult f = backend.forward_with_loss(batch);
            if (!all_finite(f.nll_sum)) {
                run.abort("non-finite log-probability at step " + std::to_string(step));
            }
            std::vector<double> weights(batch.size(), 0.0);
            double micro_loss = 0.0;
            for (std::size_t j = 0; j < micro; ++j) {
                const tune::DpoLossInputs in{-f.nll_sum[j], -f.nll_sum[micro + j], ref_chosen[picked[j]],
                                             ref_rejected[picked[j]], beta};
                micro_loss += tune::dpo_loss(in) / static_cast<double>(micro);
                const auto g = tune::dpo_loss_gradient(in);
                // log p = -nll, so d loss / d nll = -d loss / d log p.
                weights[j] = -g.policy_chosen / static_cast<double>(micro);
                weights[micro + j] = -g.policy_rejected / static_cast<double>(micro);
            }
            backend.backward(weights);
            micro_grads.push_back(backend.gradient());
            step_loss += micro_loss / static_cast<double>(k);
        }
        if (!std::isfinite(step_loss)) {
            run.abort("non-finite loss at step " + std::to_string(step));
        }
        backend.set_gradient(tune::accumulate_gradients(micro_grads, config.accumulation));
        const double lr = scheduled_learning_rate(config.optimizer, step, config.max_steps);
        backend.optimizer_step(adam_settings(config.optimizer, lr));
        run.record({{"type", "step"}, {"step", step}, {"loss", step_loss}, {"learning_rate", lr}});

        const bool last = step == config.max_steps;
        if (step % config.eval_every == 0 || last) {
            backend.set_mode(Mode::kEval);
            const auto metrics = evaluate_preferences(preferences, ref_chosen, ref_rejected, beta, backend);
            run.record({{"type", "eval"}, {"step", step}, {"loss", metrics.mean_loss},
                        {"preference_accuracy", metrics.accuracy}});
        }
        if (step % config.checkpoint_every == 0 || last) {
            run.checkpoint(step);
        }
    }
    backend.set_neftune(std::nullopt);
    backend.set_mode(Mode::kEval);
    return run.complete(seconds_since(started));
}

}  // namespace dialogtune::train
