// Copyright (c) 2026, dialogtune contributors
// SPDX-License-Identifier: Apache-2.0

#include "pipeline/pipeline.hpp"

#include <fcntl.h>
#include <signal.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include "common/error.hpp"
#include "common/hash.hpp"
#include "common/rng.hpp"
#include "corpus/corpus.hpp"
#include "dataset/dataset.hpp"
#include "eval/ballots.hpp"
#include "eval/geval.hpp"
#include "eval/report.hpp"
#include "judge/judge_client.hpp"
#include "prefgen/prefgen.hpp"
#include "train/orchestrator.hpp"

namespace dialogtune::pipeline {
namespace fs = std::filesystem;

namespace {

constexpr const char* kStageManifest = "manifest.json";
constexpr const char* kStageState = "state.json";

std::vector<Json> read_rows(const fs::path& path) { return read_jsonl(path); }

std::string relative_name(const fs::path& path, const fs::path& base) {
    const auto rel = path.lexically_relative(base);
    if (!rel.empty() && *rel.begin() != "..") {
        return rel.generic_string();
    }
    return path.generic_string();
}

fs::path checkpoint_from_manifest(const fs::path& stage_dir) {
    const auto manifest = stage_dir / kStageManifest;
    if (!fs::exists(manifest)) {
        return {};
    }
    const Json m = read_json(manifest);
    return fs::path(m.at("summary").at("checkpoint").get<std::string>());
}

Json run_summary(const train::RunManifest& m) {
    Json evals = Json::array();
    for (const auto& e : m.evals) {
        Json row{{"step", e.step}, {"loss", e.loss}};
        if (e.preference_accuracy) {
            row["preference_accuracy"] = *e.preference_accuracy;
        }
        evals.push_back(std::move(row));
    }
    const auto latest = m.latest_checkpoint();
    require(latest.has_value(), ErrorCode::kInternal, "completed run has no checkpoint");
    return Json{{"run_id", m.run_id},
                {"run_dir", m.dir.string()},
                {"checkpoint", latest->path.string()},
                {"steps", m.train_losses.size()},
                {"first_loss", m.train_losses.empty() ? 0.0 : m.train_losses.front().loss},
                {"last_loss", m.train_losses.empty() ? 0.0 : m.train_losses.back().loss},
                {"evals", std::move(evals)},
                {"trainable_parameters", m.trainable_parameters},
                {"total_parameters", m.total_parameters},
                {"reused_completed", m.reused_completed},
                {"resumed_from_step", m.resumed_from_step}};
}

judge::JudgeSettings judge_settings_for(const PipelineConfig& config, const std::string& model) {
    judge::JudgeSettings s = config.judge;
    if (!model.empty()) {
        s.http.model = model;
    }
    return s;
}

bool process_alive(long pid) { return pid > 0 && (::kill(static_cast<pid_t>(pid), 0) == 0 || errno == EPERM); }

}  // namespace

const std::vector<std::string>& stage_names() {
    static const std::vector<std::string> names = {"ingest", "pairs", "split", "pack", "sft", "prefgen",
                                                   "dpo", "generate-responses", "geval", "ballots", "report",
                                                   "serve"};
    return names;
}

// --- lock -----------------------------------------------------------------

WorkDirLock::WorkDirLock(const fs::path& work_dir) : path_(work_dir / ".lock") {
    fs::create_directories(work_dir);
    for (int attempt = 0; attempt < 2; ++attempt) {
        const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd >= 0) {
            const std::string pid = std::to_string(::getpid()) + "\n";
            [[maybe_unused]] const auto written = ::write(fd, pid.data(), pid.size());
            ::close(fd);
            return;
        }
        require(errno == EEXIST, ErrorCode::kIo, "cannot create lock file " + path_.string());
        long owner = 0;
        std::ifstream(path_) >> owner;
        if (process_alive(owner)) {
            fail(ErrorCode::kLocked, "work directory " + work_dir.string() + " is locked by running process " +
                                         std::to_string(owner));
        }
        fs::remove(path_);  // stale lock from a dead process
    }
    fail(ErrorCode::kLocked, "could not acquire " + path_.string());
}

WorkDirLock::~WorkDirLock() {
    std::error_code ec;
    fs::remove(path_, ec);
}

// --- planning -------------------------------------------------------------

struct Pipeline::StagePlan {
    std::string name;
    fs::path dir;
    std::vector<fs::path> inputs;
    std::vector<std::string> missing;
    Json settings;
    bool hashed = true;
    bool resumable = false;
    std::string input_hash;
};

Pipeline::Pipeline(PipelineConfig config, RunFlags flags) : config_(std::move(config)), flags_(std::move(flags)) {}

void Pipeline::log(const std::string& message) const {
    if (flags_.log) {
        flags_.log(message);
    }
}

fs::path Pipeline::stage_dir(const std::string& stage) const {
    return config_.paths.work_dir / (stage == "generate-responses" ? std::string("responses") : stage);
}

fs::path Pipeline::sft_checkpoint() const {
    return config_.paths.sft_checkpoint.empty() ? checkpoint_from_manifest(stage_dir("sft"))
                                                : config_.paths.sft_checkpoint;
}

fs::path Pipeline::dpo_checkpoint() const {
    return config_.paths.dpo_checkpoint.empty() ? checkpoint_from_manifest(stage_dir("dpo"))
                                                : config_.paths.dpo_checkpoint;
}

Pipeline::StagePlan Pipeline::plan(const std::string& stage) const {
    StagePlan p;
    p.name = stage;
    p.dir = stage_dir(stage);
    const auto& c = config_;
    auto need = [&p](const fs::path& path, const std::string& what) {
        p.inputs.push_back(path);
        if (path.empty()) {
            p.missing.push_back(what + " (path not configured)");
        } else if (!fs::exists(path)) {
            p.missing.push_back(what + ": " + path.string());
        }
    };
    auto need_checkpoint = [&](const fs::path& ckpt, const std::string& variant) {
        if (ckpt.empty()) {
            p.inputs.push_back({});
            p.missing.push_back(variant + " checkpoint: " + (stage_dir(variant) / kStageManifest).string() +
                                " (run the " + variant + " stage first)");
        } else {
            need(ckpt / "adapter.bin", variant + " checkpoint");
        }
    };

    if (stage == "ingest") {
        need(c.paths.lines, "utterance file");
        need(c.paths.conversations, "conversation file");
        p.settings = {{"fallback_decoder", c.dataset.fallback_decoder}};
    } else if (stage == "pairs") {
        need(stage_dir("ingest") / "conversations.jsonl", "ingested conversations");
    } else if (stage == "split") {
        need(stage_dir("pairs") / "pairs.jsonl", "pairs");
        p.settings = {{"test_fraction", c.dataset.test_fraction},
                      {"val_fraction", c.dataset.val_fraction},
                      {"seed", c.dataset.seed}};
    } else if (stage == "pack") {
        need(stage_dir("split") / "train.jsonl", "train split");
        need(stage_dir("split") / "val.jsonl", "validation split");
        p.settings = {{"max_len", c.dataset.max_len}, {"seed", c.dataset.seed}};
    } else if (stage == "sft") {
        need(stage_dir("pack") / "train.jsonl", "packed train split");
        need(stage_dir("pack") / "val.jsonl", "packed validation split");
        p.settings = train::to_json(c.sft);
    } else if (stage == "prefgen") {
        need_checkpoint(sft_checkpoint(), "sft");
        p.settings = {{"prompt_count", c.prefgen.prompt_count},
                      {"batch_size", c.prefgen.batch_size},
                      {"prompt_temperature", c.prefgen.prompt_temperature},
                      {"seed", c.prefgen.seed},
                      {"params", serve::to_json(c.prefgen.params)},
                      {"judge_provider", c.judge.provider},
                      {"judge_model", c.judge.http.model},
                      {"model", train::to_json(c.sft)}};
        p.resumable = true;
    } else if (stage == "dpo") {
        need(stage_dir("prefgen") / "preferences.jsonl", "preference records");
        need_checkpoint(sft_checkpoint(), "sft");
        p.settings = train::to_json(c.dpo);
    } else if (stage == "generate-responses") {
        need(stage_dir("split") / "test.jsonl", "test split");
        need_checkpoint(sft_checkpoint(), "sft");
        need_checkpoint(dpo_checkpoint(), "dpo");
        p.settings = {{"prompt_count", c.eval.prompt_count},
                      {"seed", c.eval.seed},
                      {"params", serve::to_json(c.eval.params)},
                      {"model", train::to_json(c.sft)}};
    } else if (stage == "geval") {
        need(stage_dir("generate-responses") / "responses.jsonl", "generated responses");
        p.settings = {{"judge_provider", c.judge.provider},
                      {"judge_model", c.eval.judge_model},
                      {"top_logprobs", c.eval.top_logprobs}};
        p.resumable = true;
    } else if (stage == "ballots") {
        need(stage_dir("generate-responses") / "responses.jsonl", "generated responses");
        p.hashed = false;
    } else if (stage == "report") {
        const fs::path results = stage_dir("geval") / "results.jsonl";
        const fs::path ballots = c.eval.ballots.empty() ? stage_dir("ballots") / "ballots.jsonl" : c.eval.ballots;
        if (fs::exists(results)) {
            p.inputs.push_back(results);
        }
        if (fs::exists(ballots)) {
            p.inputs.push_back(ballots);
        }
        if (p.inputs.empty()) {
            p.missing.push_back("G-Eval results (" + results.string() + ") or ballots (" + ballots.string() + ")");
        }
    } else {
        fail(ErrorCode::kInvalidArgument, "unknown stage '" + stage + "'");
    }
    return p;
}

// --- driver ---------------------------------------------------------------

StageResult Pipeline::run(const std::string& stage) {
    require(stage != "serve", ErrorCode::kInvalidArgument, "serve is not a batch stage");
    StagePlan p = plan(stage);
    if (!p.missing.empty()) {
        throw Error(ErrorCode::kNotFound, "missing input for stage " + stage, p.missing);
    }
    if (flags_.dry_run) {
        Json inputs = Json::array();
        for (const auto& in : p.inputs) {
            inputs.push_back(in.string());
        }
        return {stage, "dry_run", {{"inputs", std::move(inputs)}, {"output_dir", p.dir.string()}}, p.dir};
    }

    WorkDirLock lock(config_.paths.work_dir);
    Sha256 h;
    h.update(stage).update(std::string_view("\n", 1)).update(p.settings.dump());
    for (const auto& in : p.inputs) {
        h.update(std::string_view("\n", 1)).update(sha256_file(in));
    }
    p.input_hash = h.hex_digest();

    const fs::path manifest_path = p.dir / kStageManifest;
    if (p.hashed && !flags_.force && fs::exists(manifest_path)) {
        const Json manifest = read_json(manifest_path);
        bool fresh = manifest.value("input_hash", "") == p.input_hash;
        if (fresh) {
            for (const auto& [name, digest] : manifest.at("outputs").items()) {
                const fs::path out = p.dir / name;
                if (!fs::exists(out) || sha256_file(out) != digest.get<std::string>()) {
                    fresh = false;
                    break;
                }
            }
        }
        if (fresh) {
            log(stage + ": up to date");
            return {stage, "up_to_date", manifest.at("summary"), p.dir};
        }
    }

    const fs::path state_path = p.dir / kStageState;
    if (flags_.force && fs::exists(p.dir)) {
        fs::remove_all(p.dir);
    } else if (p.resumable && fs::exists(state_path)) {
        const Json state = read_json(state_path);
        if (state.value("input_hash", "") != p.input_hash) {
            throw Error(ErrorCode::kConflict,
                        stage + " state in " + p.dir.string() + " was produced from different inputs or settings",
                        {"rerun with --force to discard it"});
        }
        if (!flags_.resume) {
            throw Error(ErrorCode::kConflict, "partial " + stage + " state exists in " + p.dir.string(),
                        {"rerun with --resume to continue it, or --force to discard it"});
        }
        fs::remove(manifest_path);
        log(stage + ": resuming");
    } else if (fs::exists(p.dir) && stage != "ballots") {
        fs::remove_all(p.dir);
    }
    fs::create_directories(p.dir);
    if (p.resumable) {
        write_json(state_path, {{"stage", stage}, {"input_hash", p.input_hash}});
    }
    write_json(p.dir / "config.json", to_json(config_));
    log(stage + ": running");

    if (stage == "ingest") return ingest(p);
    if (stage == "pairs") return pairs(p);
    if (stage == "split") return split(p);
    if (stage == "pack") return pack(p);
    if (stage == "sft") return sft(p);
    if (stage == "prefgen") return prefgen(p);
    if (stage == "dpo") return dpo(p);
    if (stage == "generate-responses") return generate_responses(p);
    if (stage == "geval") return geval(p);
    if (stage == "ballots") return ballots(p);
    return report(p);
}

StageResult Pipeline::finish(const StagePlan& p, const std::vector<std::string>& outputs, Json summary) {
    Json inputs = Json::object();
    for (const auto& in : p.inputs) {
        inputs[relative_name(in, config_.paths.work_dir)] = sha256_file(in);
    }
    Json out = Json::object();
    for (const auto& name : outputs) {
        out[name] = sha256_file(p.dir / name);
    }
    write_json(p.dir / kStageManifest, {{"stage", p.name},
                                        {"input_hash", p.input_hash},
                                        {"inputs", std::move(inputs)},
                                        {"outputs", std::move(out)},
                                        {"summary", summary}});
    if (p.resumable) {
        std::error_code ec;
        fs::remove(p.dir / kStageState, ec);
    }
    log(p.name + ": completed");
    return {p.name, "completed", std::move(summary), p.dir};
}

// --- stages ---------------------------------------------------------------

StageResult Pipeline::ingest(const StagePlan& p) {
    corpus::DecoderPolicy policy;
    policy.fallback = config_.dataset.fallback_decoder == "latin1" ? corpus::FallbackDecoder::kLatin1
                                                                   : corpus::FallbackDecoder::kNone;
    const auto lines = corpus::parse_utterances(read_text(config_.paths.lines), policy);
    const auto conversations = corpus::parse_conversations(read_text(config_.paths.conversations), policy);
    const auto resolution = corpus::resolve(conversations.records, lines.records);

    std::vector<Json> rows;
    for (const auto& conv : resolution.conversations) {
        rows.push_back(corpus::to_json(conv));
    }
    write_jsonl(p.dir / "conversations.jsonl", rows);
    std::vector<Json> diagnostics;
    for (const auto& d : lines.diagnostics) {
        diagnostics.push_back({{"file", "lines"}, {"line_number", d.line_number}, {"reason", d.reason}});
    }
    for (const auto& d : conversations.diagnostics) {
        diagnostics.push_back({{"file", "conversations"}, {"line_number", d.line_number}, {"reason", d.reason}});
    }
    write_jsonl(p.dir / "diagnostics.jsonl", diagnostics);
    std::vector<Json> dropped;
    for (const auto& d : resolution.dropped) {
        dropped.push_back(corpus::to_json(d));
    }
    write_jsonl(p.dir / "dropped.jsonl", dropped);
    return finish(p, {"conversations.jsonl", "diagnostics.jsonl", "dropped.jsonl"},
                  {{"utterances", lines.records.size()},
                   {"conversations", resolution.conversations.size()},
                   {"dropped_conversations", resolution.dropped.size()},
                   {"diagnostics", diagnostics.size()},
                   {"used_fallback_decoder", lines.used_fallback_decoder}});
}

StageResult Pipeline::pairs(const StagePlan& p) {
    std::vector<dataset::DialoguePair> all;
    std::size_t conversations = 0;
    for (const auto& row : read_rows(p.inputs[0])) {
        auto made = dataset::make_pairs(corpus::resolved_from_json(row));
        all.insert(all.end(), made.begin(), made.end());
        ++conversations;
    }
    dataset::PairFilterStats stats;
    const std::size_t windows = all.size();
    all = dataset::drop_empty_pairs(std::move(all), &stats);
    std::vector<Json> rows;
    for (const auto& pair : all) {
        rows.push_back(dataset::to_json(pair));
    }
    write_jsonl(p.dir / "pairs.jsonl", rows);
    return finish(p, {"pairs.jsonl"},
                  {{"conversations", conversations},
                   {"windows", windows},
                   {"pairs", stats.kept},
                   {"dropped_empty", stats.dropped_empty}});
}

StageResult Pipeline::split(const StagePlan& p) {
    std::vector<dataset::DialoguePair> all;
    for (const auto& row : read_rows(p.inputs[0])) {
        all.push_back(dataset::pair_from_json(row));
    }
    const dataset::SplitSpec spec{config_.dataset.test_fraction, config_.dataset.val_fraction, config_.dataset.seed};
    const auto parts = dataset::split(all, spec);
    auto dump = [&](const std::vector<dataset::DialoguePair>& items, const std::string& name) {
        std::vector<Json> rows;
        for (const auto& pair : items) {
            rows.push_back(dataset::to_json(pair));
        }
        write_jsonl(p.dir / name, rows);
    };
    dump(parts.train, "train.jsonl");
    dump(parts.validation, "val.jsonl");
    dump(parts.test, "test.jsonl");
    return finish(p, {"train.jsonl", "val.jsonl", "test.jsonl"},
                  {{"total", all.size()},
                   {"train", parts.train.size()},
                   {"validation", parts.validation.size()},
                   {"test", parts.test.size()},
                   {"seed", spec.seed}});
}

StageResult Pipeline::pack(const StagePlan& p) {
    dataset::CharTokenizer tokenizer;
    const dataset::ChatTemplate chat_template;
    Json summary = Json::object();
    std::int64_t next_id = 0;
    for (const auto& [input, name] : {std::pair{p.inputs[0], std::string("train")}, std::pair{p.inputs[1], std::string("val")}}) {
        std::vector<dataset::TokenizedExample> examples;
        std::size_t truncated = 0;
        for (const auto& row : read_rows(input)) {
            auto ex = dataset::tokenize_pair(dataset::pair_from_json(row), next_id++, tokenizer, chat_template,
                                             config_.dataset.max_len);
            truncated += ex.truncated ? 1 : 0;
            examples.push_back(std::move(ex));
        }
        const auto packed = dataset::pack(examples, config_.dataset.max_len,
                                          derive_seed(config_.dataset.seed, name == "train" ? 1 : 2));
        std::vector<Json> rows;
        std::size_t tokens = 0;
        for (const auto& bin : packed) {
            tokens += bin.token_ids.size();
            rows.push_back(dataset::to_json(bin));
        }
        write_jsonl(p.dir / (name + ".jsonl"), rows);
        summary[name] = {{"examples", examples.size()},
                         {"truncated", truncated},
                         {"sequences", packed.size()},
                         {"tokens", tokens},
                         {"fill", packed.empty() ? 0.0
                                                 : static_cast<double>(tokens) /
                                                       static_cast<double>(packed.size() * config_.dataset.max_len)}};
    }
    summary["tokenizer"] = tokenizer.id();
    return finish(p, {"train.jsonl", "val.jsonl"}, std::move(summary));
}

StageResult Pipeline::sft(const StagePlan& p) {
    auto load = [](const fs::path& path) {
        std::vector<train::TrainingSequence> out;
        for (const auto& row : read_rows(path)) {
            out.push_back(train::from_packed(dataset::packed_from_json(row)));
        }
        return out;
    };
    const auto train_set = load(p.inputs[0]);
    const auto val_set = load(p.inputs[1]);
    const train::DatasetInfo info{sha256_hex(sha256_file(p.inputs[0]) + sha256_file(p.inputs[1])),
                                  config_.dataset.max_len};
    auto backend = train::make_backend(config_.sft.backend);
    train::RunOptions options{config_.paths.work_dir / "runs", [this](const Json& record) {
                                  if (record.value("type", "") == "eval") {
                                      log("sft: eval step " + record.at("step").dump() + " loss " +
                                          record.at("loss").dump());
                                  }
                              }};
    const auto manifest = train::run_sft(config_.sft, train_set, val_set, info, *backend, options);
    return finish(p, {}, run_summary(manifest));
}

StageResult Pipeline::prefgen(const StagePlan& p) {
    serve::ServiceConfig service;
    service.backend = config_.sft.backend;
    service.load = train::load_spec(config_.sft);
    auto generator = serve::backend_generator_factory(service)(ModelVariant::kSft, {sft_checkpoint(), std::nullopt});
    judge::JudgeStack judge(config_.judge, p.dir / "judge_log.jsonl");

    prefgen::PrefgenConfig pc;
    pc.prompt_count = config_.prefgen.prompt_count;
    pc.prompts.batch_size = config_.prefgen.batch_size;
    pc.prompts.temperature = config_.prefgen.prompt_temperature;
    pc.params = config_.prefgen.params;
    pc.seed = config_.prefgen.seed;
    pc.concurrency = config_.prefgen.concurrency;
    const auto s = prefgen::run_prefgen(pc, judge.client(), *generator, p.dir);

    Json summary{{"prompts", s.prompts},
                 {"candidates", s.candidates},
                 {"records", s.records},
                 {"skipped_verdicts", s.skipped_verdicts},
                 {"resampled", s.sampling.resampled},
                 {"discarded_identical", s.sampling.discarded_identical},
                 {"backend_failures", s.sampling.backend_failures},
                 {"diagnostics", s.sampling.diagnostics}};
    const bool all_adjudicated = s.records + s.skipped_verdicts == s.candidates;
    if (!s.prompts_complete || !all_adjudicated || s.sampling.backend_failures > 0) {
        summary["error"] = s.prompt_error.empty() ? "some items failed; rerun with --resume" : s.prompt_error;
        log("prefgen: partial (" + summary["error"].get<std::string>() + ")");
        return {p.name, "partial", std::move(summary), p.dir};
    }
    return finish(p, {"preferences.jsonl"}, std::move(summary));
}

StageResult Pipeline::dpo(const StagePlan& p) {
    auto backend = train::make_backend(config_.dpo.backend);
    const dataset::ChatTemplate chat_template;
    std::vector<train::PreferenceExample> examples;
    for (const auto& row : read_rows(p.inputs[0])) {
        const auto record = prefgen::preference_from_json(row);
        examples.push_back(
            {train::sequence_for_pair(record.prompt, record.chosen, backend->tokenizer(), chat_template,
                                      config_.dpo.max_sequence_length),
             train::sequence_for_pair(record.prompt, record.rejected, backend->tokenizer(), chat_template,
                                      config_.dpo.max_sequence_length)});
    }
    require(!examples.empty(), ErrorCode::kInvalidArgument, "no preference records to train on");
    const train::DatasetInfo info{sha256_file(p.inputs[0]), config_.dpo.max_sequence_length};
    train::RunOptions options{config_.paths.work_dir / "runs", [this](const Json& record) {
                                  if (record.value("type", "") == "eval") {
                                      log("dpo: eval " + record.dump());
                                  }
                              }};
    const auto manifest = train::run_dpo(config_.dpo, examples, sft_checkpoint(), info, *backend, options);
    return finish(p, {}, run_summary(manifest));
}

StageResult Pipeline::generate_responses(const StagePlan& p) {
    std::vector<dataset::DialoguePair> test;
    for (const auto& row : read_rows(p.inputs[0])) {
        test.push_back(dataset::pair_from_json(row));
    }
    if (config_.eval.prompt_count > 0 && test.size() > config_.eval.prompt_count) {
        test.resize(config_.eval.prompt_count);
    }
    serve::ServiceConfig service;
    service.backend = config_.sft.backend;
    service.load = train::load_spec(config_.sft);
    const auto factory = serve::backend_generator_factory(service);
    const auto variants = serve::default_variants(sft_checkpoint(), dpo_checkpoint());

    std::vector<Json> rows;
    for (const auto variant : kAllVariants) {
        const auto& spec = variants.at(variant);
        auto generator = factory(variant, spec);
        for (std::size_t i = 0; i < test.size(); ++i) {
            const std::uint64_t seed = derive_seed(config_.eval.seed, i * 3 + static_cast<std::size_t>(variant));
            const auto g = generator->generate(serve::single_turn(test[i].prompt_text, spec.system_prompt),
                                               config_.eval.params, seed);
            rows.push_back({{"prompt_id", i},
                            {"variant", to_string(variant)},
                            {"dialogue_line", test[i].prompt_text},
                            {"reference", test[i].response_text},
                            {"response", g.text},
                            {"token_count", g.token_count},
                            {"seed", seed}});
        }
        log(std::string("generate-responses: ") + to_string(variant) + " done");
    }
    write_jsonl(p.dir / "responses.jsonl", rows);
    return finish(p, {"responses.jsonl"}, {{"prompts", test.size()}, {"responses", rows.size()}});
}

StageResult Pipeline::geval(const StagePlan& p) {
    std::vector<eval::EvalItem> items;
    for (const auto& row : read_rows(p.inputs[0])) {
        const auto variant = parse_variant(row.at("variant").get<std::string>());
        require(variant.has_value(), ErrorCode::kInvalidArgument, "unknown variant in responses");
        items.push_back({row.at("prompt_id").get<std::int64_t>(), *variant, row.at("dialogue_line").get<std::string>(),
                         row.at("response").get<std::string>()});
    }
    judge::JudgeStack judge(judge_settings_for(config_, config_.eval.judge_model), p.dir / "judge_log.jsonl");
    eval::GevalRunOptions options;
    options.concurrency = config_.eval.concurrency;
    options.top_logprobs = config_.eval.top_logprobs;
    options.cost_per_1k_prompt_tokens = config_.eval.cost_per_1k_prompt_tokens;
    options.cost_per_1k_completion_tokens = config_.eval.cost_per_1k_completion_tokens;
    const auto s = eval::run_geval(items, eval::default_criteria(), judge.client(), p.dir / "results.jsonl", options);

    Json usage = Json::object();
    for (const auto& [criterion, u] : s.usage) {
        usage[criterion] = {{"requests", u.requests},
                            {"prompt_tokens", u.prompt_tokens},
                            {"completion_tokens", u.completion_tokens},
                            {"cost", u.cost}};
    }
    // Usage accumulates across resumed runs.
    const fs::path usage_path = p.dir / "usage.jsonl";
    JsonlAppender(usage_path).append({{"newly_scored", s.newly_scored}, {"by_criterion", usage}});

    std::size_t invalid = 0;
    std::size_t fallback = 0;
    for (const auto& r : s.results) {
        invalid += r.status == eval::ScoreStatus::kInvalid ? 1 : 0;
        fallback += r.status == eval::ScoreStatus::kFallback ? 1 : 0;
    }
    Json summary{{"results", s.results.size()},
                 {"expected", items.size() * eval::kAllCriteria.size()},
                 {"newly_scored", s.newly_scored},
                 {"reused", s.reused},
                 {"failed", s.failed},
                 {"invalid", invalid},
                 {"fallback", fallback},
                 {"usage", usage},
                 {"diagnostics", s.diagnostics}};
    if (s.failed > 0) {
        log("geval: partial (" + std::to_string(s.failed) + " judge failures)");
        return {p.name, "partial", std::move(summary), p.dir};
    }
    return finish(p, {"results.jsonl"}, std::move(summary));
}

StageResult Pipeline::ballots(const StagePlan& p) {
    std::map<std::int64_t, eval::BallotItem> by_prompt;
    for (const auto& row : read_rows(p.inputs[0])) {
        const auto id = row.at("prompt_id").get<std::int64_t>();
        auto& item = by_prompt[id];
        item.prompt_id = id;
        item.prompt = row.at("dialogue_line").get<std::string>();
        item.responses[*parse_variant(row.at("variant").get<std::string>())] = row.at("response").get<std::string>();
    }
    std::vector<eval::BallotItem> items;
    for (auto& [id, item] : by_prompt) {
        if (item.responses.size() == 3) {
            items.push_back(std::move(item));
        }
    }
    const fs::path out_path = p.dir / "ballots.jsonl";
    std::vector<std::string> done;
    if (fs::exists(out_path)) {
        for (const auto& row : read_rows(out_path)) {
            done.push_back(row.at("ballot_id").get<std::string>());
        }
    }
    auto session = eval::collect_ballots(items, flags_.evaluator_id,
                                         derive_seed(config_.eval.seed, stable_hash64(flags_.evaluator_id)),
                                         flags_.input ? *flags_.input : std::cin,
                                         flags_.output ? *flags_.output : std::cout, done);
    JsonlAppender out(out_path);
    for (const auto& b : session.ballots) {
        out.append(eval::to_json(b));
    }
    Json summary{{"evaluator_id", flags_.evaluator_id},
                 {"recorded", session.ballots.size()},
                 {"previously_recorded", done.size()},
                 {"items", items.size()},
                 {"quit_early", session.quit_early}};
    write_json(p.dir / kStageManifest, {{"stage", p.name}, {"summary", summary}});
    return {p.name, "completed", std::move(summary), p.dir};
}

StageResult Pipeline::report(const StagePlan& p) {
    const fs::path results_path = stage_dir("geval") / "results.jsonl";
    std::vector<eval::GevalResult> results;
    std::optional<eval::BallotTally> tally;
    for (const auto& input : p.inputs) {
        if (input == results_path) {
            for (const auto& row : read_rows(input)) {
                results.push_back(eval::geval_result_from_json(row));
            }
        } else {
            std::vector<eval::HumanBallot> ballots;
            std::vector<std::string> rejected;
            for (const auto& row : read_rows(input)) {
                try {
                    ballots.push_back(eval::ballot_from_json(row));
                } catch (const Error& e) {
                    rejected.push_back(e.what());
                }
            }
            tally = eval::tally_ballots(ballots);
            tally->rejected.insert(tally->rejected.end(), rejected.begin(), rejected.end());
        }
    }
    const auto report = eval::build_report(results, tally);
    eval::write_report(p.dir, report, results);
    return finish(p, {"report.json", "figure1.csv", "figure2.csv"}, eval::to_json(report));
}

std::unique_ptr<serve::ChatService> Pipeline::make_chat_service() const {
    serve::ServiceConfig service;
    service.backend = config_.sft.backend;
    service.load = train::load_spec(config_.sft);
    service.variants = serve::default_variants(sft_checkpoint(), dpo_checkpoint());
    service.default_params = config_.serve.params;
    service.busy_policy = config_.serve.busy_policy == "queue" ? serve::BusyPolicy::kQueue : serve::BusyPolicy::kReject;
    service.generation_timeout = std::chrono::milliseconds(config_.serve.timeout_ms);
    if (!config_.serve.state_dir.empty()) {
        service.state_dir = config_.serve.state_dir;
    }
    service.seed = config_.eval.seed;
    auto factory = serve::backend_generator_factory(service);
    return std::make_unique<serve::ChatService>(std::move(service), std::move(factory));
}

}  // namespace dialogtune::pipeline
