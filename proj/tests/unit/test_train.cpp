// Copyright (c) 2026, dialogtune contributors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "common/error.hpp"
#include "test_support.hpp"
#include "train/config.hpp"
#include "train/manifest.hpp"
#include "train/orchestrator.hpp"
#include "train/toy_backend.hpp"

using namespace dialogtune;
using namespace dialogtune::train;
using dt_test::TempDir;

TEST_CASE("train config rejects unknown and invalid fields together") {
    const Json bad = {{"max_steps", 0}, {"learning_rate", 1.0}, {"lora", {{"rank", -1}}}};
    try {
        train_config_from_json(bad);
        FAIL("expected a config error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::kConfig);
        CHECK(e.details().size() >= 3);
    }
}

TEST_CASE("train config JSON roundtrips and hashes canonically") {
    auto c = dt_test::toy_config();
    const auto back = train_config_from_json(to_json(c));
    CHECK(canonical_form(back) == canonical_form(c));
    CHECK(config_hash(back) == config_hash(c));
    c.seed += 1;
    CHECK(config_hash(back) != config_hash(c));
}

TEST_CASE("learning-rate schedules warm up and decay") {
    OptimizerConfig o;
    o.learning_rate = 1.0;
    o.warmup_steps = 10;
    o.schedule = "linear";
    CHECK(scheduled_learning_rate(o, 5, 100) == doctest::Approx(0.5));
    CHECK(scheduled_learning_rate(o, 10, 100) == doctest::Approx(1.0));
    CHECK(scheduled_learning_rate(o, 100, 100) < 0.05);
    o.schedule = "cosine";
    CHECK(scheduled_learning_rate(o, 55, 100) == doctest::Approx(0.5).epsilon(0.02));
}

TEST_CASE("only adapter parameters are trainable and base weights never change") {
    TempDir dir("dt-train");
    ToyBackend backend;
    auto config = dt_test::toy_config();
    config.max_steps = 10;
    config.eval_every = 5;
    config.checkpoint_every = 5;
    const auto seqs = dt_test::to_sequences(dt_test::synthetic_pairs(40, 1), backend.tokenizer());
    const auto run = run_sft(config, seqs, seqs, {"d1", 128}, backend, {dir.path(), {}});
    CHECK(run.completed);
    CHECK(run.trainable_parameters < run.total_parameters);
    CHECK(run.trainable_parameters == backend.trainable_parameter_count());
    CHECK(run.base_hash_before == run.base_hash_after);
    CHECK(run.checkpoints.size() == 2);
}

TEST_CASE("a completed run is reused without recomputation") {
    TempDir dir("dt-train");
    auto config = dt_test::toy_config();
    config.max_steps = 6;
    config.eval_every = 3;
    config.checkpoint_every = 3;
    ToyBackend first;
    const auto seqs = dt_test::to_sequences(dt_test::synthetic_pairs(20, 2), first.tokenizer());
    const auto a = run_sft(config, seqs, seqs, {"d2", 128}, first, {dir.path(), {}});
    ToyBackend second;
    const auto b = run_sft(config, seqs, seqs, {"d2", 128}, second, {dir.path(), {}});
    CHECK(b.reused_completed);
    CHECK(b.run_id == a.run_id);
    CHECK(second.forward_calls() == 0);
}

TEST_CASE("an interrupted run resumes from its last checkpoint and matches an uninterrupted one") {
    auto config = dt_test::toy_config();
    config.max_steps = 8;
    config.eval_every = 4;
    config.checkpoint_every = 4;
    ToyBackend probe;
    const auto seqs = dt_test::to_sequences(dt_test::synthetic_pairs(24, 3), probe.tokenizer());

    TempDir straight("dt-straight");
    ToyBackend b1;
    const auto whole = run_sft(config, seqs, seqs, {"d3", 128}, b1, {straight.path(), {}});

    TempDir broken("dt-broken");
    ToyBackend b2;
    int records = 0;
    RunOptions opts{broken.path(), [&](const Json& r) {
                        if (r.value("type", "") == "step" && ++records == 6) {
                            throw std::runtime_error("killed");
                        }
                    }};
    CHECK_THROWS(run_sft(config, seqs, seqs, {"d3", 128}, b2, opts));
    ToyBackend b3;
    const auto resumed = run_sft(config, seqs, seqs, {"d3", 128}, b3, {broken.path(), {}});
    CHECK(resumed.completed);
    CHECK(resumed.resumed_from_step == 4);
    REQUIRE(resumed.train_losses.size() == whole.train_losses.size());
    for (std::size_t i = 0; i < whole.train_losses.size(); ++i) {
        CHECK(resumed.train_losses[i].loss == doctest::Approx(whole.train_losses[i].loss).epsilon(1e-12));
    }
}

TEST_CASE("capability checks fail fast on unsupported settings") {
    ToyBackend backend;
    auto config = dt_test::toy_config();
    config.flash_attention = true;
    CHECK_THROWS_AS(check_capabilities(config, backend, false), Error);
    config.flash_attention = false;
    CHECK_NOTHROW(check_capabilities(config, backend, true));
    CHECK_THROWS_AS(make_backend("external"), Error);
}

TEST_CASE("dataset and config must agree on max_sequence_length") {
    TempDir dir("dt-train");
    ToyBackend backend;
    auto config = dt_test::toy_config();
    const auto seqs = dt_test::to_sequences(dt_test::synthetic_pairs(8, 1), backend.tokenizer());
    CHECK_THROWS_AS(run_sft(config, seqs, seqs, {"d4", 256}, backend, {dir.path(), {}}), Error);
}

TEST_CASE("4-bit storage stays close to full precision") {
    BackendLoadSpec spec;
    spec.base_model_id = "toy-16x32";
    spec.weight_precision = WeightPrecision::kThirtyTwoBit;
    ToyBackend full;
    full.load(spec);
    spec.weight_precision = WeightPrecision::kFourBitNf4;
    ToyBackend quant;
    quant.load(spec);
    const auto seqs = dt_test::to_sequences(dt_test::synthetic_pairs(8, 1), full.tokenizer());
    const auto a = full.forward_with_loss(seqs).nll_sum;
    const auto b = quant.forward_with_loss(seqs).nll_sum;
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(std::isfinite(b[i]));
        CHECK(std::abs(a[i] - b[i]) / a[i] < 0.2);
    }
    CHECK(full.base_weights_hash() != quant.base_weights_hash());
}

TEST_CASE("adapter checkpoints roundtrip") {
    TempDir dir("dt-ckpt");
    ToyBackend backend;
    backend.load(load_spec(dt_test::toy_config()));
    auto state = backend.save_adapter();
    for (auto& [name, m] : state.tensors) m.setConstant(0.25);
    backend.load_adapter(state);
    save_checkpoint(dir.path(), backend, {"run", "hash", 7, "sft"});
    ToyBackend other;
    other.load(load_spec(dt_test::toy_config()));
    load_checkpoint(dir.path(), other);
    const auto back = other.save_adapter();
    for (const auto& [name, m] : state.tensors) CHECK(back.tensors.at(name) == m);
    CHECK(read_checkpoint_metadata(dir.path()).step == 7);
}

TEST_CASE("sampling respects max_new_tokens and is seed-deterministic") {
    ToyBackend backend;
    backend.load(load_spec(dt_test::toy_config()));
    const auto prompt = backend.tokenizer().encode(dataset::render_prompt("where is it?", {}));
    serve::GenerationParams p;
    p.max_new_tokens = 7;
    const auto a = backend.sample(prompt, p, 5, std::nullopt);
    const auto b = backend.sample(prompt, p, 5, std::nullopt);
    CHECK(a == b);
    CHECK(a.size() <= 7);
    CHECK_THROWS_AS(backend.sample(prompt, p, 5, std::chrono::steady_clock::now() - std::chrono::seconds(1)), Error);
}
