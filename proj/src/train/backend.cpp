// Copyright (c) 2026, dialogtune contributors
// SPDX-License-Identifier: Apache-2.0

#include "train/backend.hpp"

#include <cstring>
#include <fstream>

#include "common/error.hpp"
#include "common/jsonl.hpp"
#include "train/toy_backend.hpp"

namespace dialogtune::train {
namespace {

constexpr char kAdapterMagic[8] = {'D', 'T', 'A', 'D', 'A', 'P', 'T', '1'};
constexpr char kOptimizerMagic[8] = {'D', 'T', 'O', 'P', 'T', 'I', 'M', '1'};

template <typename T>
void put(std::ostream& out, const T& value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    require(static_cast<bool>(in), ErrorCode::kIo, "truncated checkpoint file");
    return value;
}

void put_doubles(std::ostream& out, std::span<const double> values) {
    put<std::uint64_t>(out, values.size());
    out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
}

std::vector<double> get_doubles(std::istream& in) {
    const auto count = get<std::uint64_t>(in);
    std::vector<double> values(count);
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(count * sizeof(double)));
    require(static_cast<bool>(in), ErrorCode::kIo, "truncated checkpoint file");
    return values;
}

void check_magic(std::istream& in, const char (&magic)[8], const std::filesystem::path& path) {
    char header[8] = {};
    in.read(header, sizeof(header));
    require(in && std::memcmp(header, magic, sizeof(header)) == 0, ErrorCode::kIo,
            "not a dialogtune checkpoint file: " + path.string());
}

}  // namespace

std::size_t TrainingSequence::label_count() const {
    std::size_t count = 0;
    for (auto m : label_mask) {
        count += m != 0 ? 1 : 0;
    }
    return count;
}

TrainingSequence from_packed(const dataset::PackedExample& packed) {
    return {packed.token_ids, packed.label_mask, packed.segment_boundaries};
}

TrainingSequence sequence_for_pair(const std::string& prompt, const std::string& response,
                                   const dataset::Tokenizer& tokenizer, const dataset::ChatTemplate& chat_template,
                                   std::size_t max_len, const std::optional<std::string>& system_prompt) {
    const dataset::DialoguePair pair{prompt, response, 0, 0};
    const auto example = dataset::tokenize_pair(pair, 0, tokenizer, chat_template, max_len, system_prompt);
    TrainingSequence seq;
    seq.tokens = example.token_ids;
    seq.label_mask.assign(example.length, 0);
    for (std::size_t t = example.label_start; t < example.length; ++t) {
        seq.label_mask[t] = 1;
    }
    seq.segments.push_back({0, example.length});
    return seq;
}

std::unique_ptr<ModelBackend> make_backend(const std::string& name) {
    if (name == "toy") {
        return std::make_unique<ToyBackend>();
    }
    fail(ErrorCode::kUnavailable, "model backend '" + name + "' is not available in this build");
}

void save_adapter_file(const std::filesystem::path& path, const AdapterState& state) {
    std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorCode::kIo, "cannot write " + path.string());
    out.write(kAdapterMagic, sizeof(kAdapterMagic));
    put<std::int32_t>(out, state.rank);
    put<double>(out, state.alpha);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(state.tensors.size()));
    for (const auto& [name, m] : state.tensors) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put<std::int64_t>(out, m.rows());
        put<std::int64_t>(out, m.cols());
        put_doubles(out, std::span<const double>(m.data(), static_cast<std::size_t>(m.size())));
    }
}

AdapterState load_adapter_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorCode::kNotFound, "missing adapter file: " + path.string());
    check_magic(in, kAdapterMagic, path);
    AdapterState state;
    state.rank = get<std::int32_t>(in);
    state.alpha = get<double>(in);
    const auto count = get<std::uint32_t>(in);
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto len = get<std::uint32_t>(in);
        std::string name(len, '\0');
        in.read(name.data(), len);
        const auto rows = get<std::int64_t>(in);
        const auto cols = get<std::int64_t>(in);
        const auto values = get_doubles(in);
        require(static_cast<std::int64_t>(values.size()) == rows * cols, ErrorCode::kIo, "corrupt adapter tensor");
        tune::Matrix m(rows, cols);
        std::copy(values.begin(), values.end(), m.data());
        state.tensors.emplace(std::move(name), std::move(m));
    }
    return state;
}

void save_optimizer_file(const std::filesystem::path& path, const OptimizerState& state) {
    std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorCode::kIo, "cannot write " + path.string());
    out.write(kOptimizerMagic, sizeof(kOptimizerMagic));
    put<std::int64_t>(out, state.step);
    put_doubles(out, state.first_moment);
    put_doubles(out, state.second_moment);
}

OptimizerState load_optimizer_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorCode::kNotFound, "missing optimizer file: " + path.string());
    check_magic(in, kOptimizerMagic, path);
    OptimizerState state;
    state.step = get<std::int64_t>(in);
    state.first_moment = get_doubles(in);
    state.second_moment = get_doubles(in);
    return state;
}

void save_checkpoint(const std::filesystem::path& dir, const ModelBackend& backend, const CheckpointMetadata& meta) {
    std::filesystem::create_directories(dir);
    save_adapter_file(dir / "adapter.bin", backend.save_adapter());
    save_optimizer_file(dir / "optimizer.bin", backend.save_optimizer());
    write_json(dir / "adapter.json", Json{{"run_id", meta.run_id},
                                          {"config_hash", meta.config_hash},
                                          {"step", meta.step},
                                          {"kind", meta.kind},
                                          {"backend", backend.name()}});
}

CheckpointMetadata read_checkpoint_metadata(const std::filesystem::path& dir) {
    const Json meta = read_json(dir / "adapter.json");
    return {meta.value("run_id", ""), meta.value("config_hash", ""), meta.value("step", std::int64_t{0}),
            meta.value("kind", "")};
}

void load_checkpoint(const std::filesystem::path& dir, ModelBackend& backend, bool with_optimizer) {
    require(std::filesystem::is_directory(dir), ErrorCode::kNotFound, "missing checkpoint: " + dir.string());
    backend.load_adapter(load_adapter_file(dir / "adapter.bin"));
    if (with_optimizer) {
        backend.load_optimizer(load_optimizer_file(dir / "optimizer.bin"));
    }
}

}  // namespace dialogtune::train
