// Copyright (c) 2026, dialogtune contributors
// SPDX-License-Identifier: Apache-2.0

// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any
// fails. Every expected value is recomputed here by a separate oracle
// rather than read back from the library.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "common/jsonl.hpp"
#include "common/rng.hpp"
#include "corpus/corpus.hpp"
#include "dataset/dataset.hpp"
#include "eval/ballots.hpp"
#include "eval/geval.hpp"
#include "prefgen/prefgen.hpp"
#include "serve/chat_service.hpp"
#include "serve/http_server.hpp"
#include "serve/sampling.hpp"
#include "test_support.hpp"
#include "train/config.hpp"
#include "train/orchestrator.hpp"
#include "train/toy_backend.hpp"
#include "tune/tune_math.hpp"

// After Eigen: <resolv.h> defines a _res macro that breaks Eigen headers.
#include <httplib.h>

namespace {

using namespace dt_test;
namespace fs = std::filesystem;

struct Outcome {
    bool pass = true;
    std::string detail;

    void check(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail += (detail.empty() ? "" : "; ") + what;
        }
    }
    void note(const std::string& what) { detail += (detail.empty() ? "" : "; ") + what; }
};

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(6);
    os << v;
    return os.str();
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<std::string> split_fields(const std::string& line, const std::string& sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (std::size_t pos; (pos = line.find(sep, start)) != std::string::npos; start = pos + sep.size()) {
        out.push_back(line.substr(start, pos - start));
    }
    out.push_back(line.substr(start));
    return out;
}

// ---------------------------------------------------------------------------

Outcome corpus_pairs() {
    Outcome o;
    const std::string lines_raw = read_file(fixture("movie_lines.txt"));
    const std::string convs_raw = read_file(fixture("movie_conversations.txt"));

    // Oracle: plain string splitting, no library code.
    std::map<std::string, std::string> text_by_id;
    {
        std::istringstream in(lines_raw);
        for (std::string line; std::getline(in, line);) {
            auto f = split_fields(line, " +++$+++ ");
            if (f.size() == 5) {
                text_by_id[f[0]] = f[4];
            }
        }
    }
    std::size_t expected_pairs = 0;
    std::vector<std::string> first_ids;
    bool first_seen = false;
    {
        std::istringstream in(convs_raw);
        const std::regex id_re("'([^']+)'");
        for (std::string line; std::getline(in, line);) {
            auto f = split_fields(line, " +++$+++ ");
            if (f.size() != 4) {
                continue;
            }
            std::vector<std::string> ids;
            for (std::sregex_iterator it(f[3].begin(), f[3].end(), id_re), end; it != end; ++it) {
                ids.push_back((*it)[1]);
            }
            if (!first_seen) {
                first_ids = ids;
                first_seen = true;
            }
            const bool complete = std::all_of(ids.begin(), ids.end(), [&](const auto& id) {
                return text_by_id.count(id) > 0;
            });
            if (complete && !ids.empty()) {
                expected_pairs += ids.size() - 1;
            }
        }
    }

    const auto utterances = corpus::parse_utterances(lines_raw);
    const auto conversations = corpus::parse_conversations(convs_raw);
    const auto resolved = corpus::resolve(conversations.records, utterances.records);
    std::size_t got = 0;
    for (const auto& c : resolved.conversations) {
        got += dataset::make_pairs(c).size();
    }
    o.check(got == expected_pairs, "pairs " + std::to_string(got) + " != oracle " + std::to_string(expected_pairs));
    o.note("pairs=" + std::to_string(got) + " oracle=" + std::to_string(expected_pairs));

    o.check(first_ids.size() == 3, "first fixture conversation is not 3 lines");
    const auto three = std::find_if(resolved.conversations.begin(), resolved.conversations.end(),
                                    [](const auto& c) { return c.conversation_index == 0; });
    if (three == resolved.conversations.end() || first_ids.size() != 3) {
        o.check(false, "3-line conversation missing");
        return o;
    }
    const auto pairs = dataset::make_pairs(*three);
    o.check(pairs.size() == 2, "3-line conversation gave " + std::to_string(pairs.size()) + " pairs");
    if (pairs.size() == 2) {
        o.check(pairs[0].prompt_text == text_by_id[first_ids[0]] && pairs[0].response_text == text_by_id[first_ids[1]],
                "window 0 mismatch");
        o.check(pairs[1].prompt_text == text_by_id[first_ids[1]] && pairs[1].response_text == text_by_id[first_ids[2]],
                "window 1 mismatch");
    }
    return o;
}

// Minimum bins by subset DP; exact for small n.
std::size_t optimal_bins(const std::vector<std::size_t>& sizes, std::size_t capacity) {
    const std::size_t n = sizes.size();
    const std::size_t full = (std::size_t{1} << n) - 1;
    std::vector<std::size_t> load(full + 1, 0);
    for (std::size_t m = 1; m <= full; ++m) {
        const std::size_t low = static_cast<std::size_t>(__builtin_ctzll(m));
        load[m] = load[m & (m - 1)] + sizes[low];
    }
    std::vector<std::size_t> best(full + 1, n + 1);
    best[0] = 0;
    for (std::size_t m = 1; m <= full; ++m) {
        const std::size_t low = m & (~m + 1);
        // Bins containing the lowest remaining item.
        const std::size_t rest = m ^ low;
        for (std::size_t s = rest;; s = (s - 1) & rest) {
            const std::size_t bin = s | low;
            if (load[bin] <= capacity) {
                best[m] = std::min(best[m], best[m ^ bin] + 1);
            }
            if (s == 0) {
                break;
            }
        }
    }
    return best[full];
}

std::vector<dataset::TokenizedExample> examples_of(const std::vector<std::size_t>& lengths) {
    std::vector<dataset::TokenizedExample> out;
    for (std::size_t i = 0; i < lengths.size(); ++i) {
        dataset::TokenizedExample e;
        e.example_id = static_cast<std::int64_t>(i);
        e.token_ids.assign(lengths[i], static_cast<dataset::TokenId>(4 + i % 50));
        e.length = lengths[i];
        out.push_back(std::move(e));
    }
    return out;
}

Outcome packing() {
    Outcome o;
    constexpr std::size_t cap = 512;
    Rng rng(2024);
    std::vector<std::size_t> lengths;
    for (int i = 0; i < 1000; ++i) {
        lengths.push_back(1 + rng.below(cap));
    }
    const auto packed = dataset::pack(examples_of(lengths), cap, 5);
    std::vector<int> seen(lengths.size(), 0);
    std::size_t over = 0;
    for (const auto& p : packed) {
        over += p.token_ids.size() > cap ? 1 : 0;
        std::size_t members = 0;
        for (auto id : p.member_ids) {
            if (id >= 0 && static_cast<std::size_t>(id) < seen.size()) {
                ++seen[static_cast<std::size_t>(id)];
                members += lengths[static_cast<std::size_t>(id)];
            }
        }
        o.check(members == p.token_ids.size(), "bin token count differs from its members");
    }
    o.check(over == 0, std::to_string(over) + " bins exceed 512");
    o.check(std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; }), "example not packed exactly once");
    o.note(std::to_string(packed.size()) + " bins for 1000 examples");

    // Small instances against the exact optimum, under several length
    // regimes, plus one fixed instance where first-fit needs opt + 2.
    std::vector<std::vector<std::size_t>> small = {{121, 215, 241, 201, 234, 351, 297, 291}};
    for (int trial = 0; trial < 20000; ++trial) {
        const std::size_t n = 1 + rng.below(8);
        std::vector<std::size_t> sizes;
        for (std::size_t i = 0; i < n; ++i) {
            switch (trial % 3) {
                case 0: sizes.push_back(1 + rng.below(cap)); break;
                case 1: sizes.push_back(150 + rng.below(220)); break;
                default: sizes.push_back(rng.uniform() < 0.5 ? 257 + rng.below(120) : 1 + rng.below(256)); break;
            }
        }
        small.push_back(std::move(sizes));
    }
    std::size_t instances = 0;
    std::size_t exceeded = 0;
    std::size_t worst = 0;
    std::string example;
    for (std::size_t trial = 0; trial < small.size(); ++trial) {
        const auto& sizes = small[trial];
        const std::size_t opt = optimal_bins(sizes, cap);
        const auto ex = examples_of(sizes);
        const std::size_t in_order = dataset::pack_in_order(ex, cap).size();
        const std::size_t shuffled = dataset::pack(ex, cap, trial).size();
        const std::size_t ff = std::max(in_order, shuffled);
        worst = std::max(worst, ff - opt);
        if (ff > opt + 1) {
            ++exceeded;
            if (example.empty()) {
                for (auto v : sizes) example += std::to_string(v) + " ";
                example += "-> " + std::to_string(ff) + " bins vs optimum " + std::to_string(opt);
            }
        }
        ++instances;
    }
    o.check(exceeded == 0, std::to_string(exceeded) + " small instances need more than optimum + 1 bins (" +
                               example + ")");
    o.note(std::to_string(instances) + " small instances, worst excess " + std::to_string(worst));
    return o;
}

Outcome split() {
    Outcome o;
    std::vector<int> items(100);
    std::iota(items.begin(), items.end(), 0);
    const dataset::SplitSpec spec{0.20, 0.20, 7};
    const auto a = dataset::split(items, spec);
    const auto b = dataset::split(items, spec);
    const auto near = [](std::size_t got, std::size_t want) { return got + 1 >= want && got <= want + 1; };
    o.check(near(a.train.size(), 64) && near(a.validation.size(), 16) && near(a.test.size(), 20), "sizes off");
    o.note(std::to_string(a.train.size()) + "/" + std::to_string(a.validation.size()) + "/" +
           std::to_string(a.test.size()));
    o.check(a.train == b.train && a.validation == b.validation && a.test == b.test, "not deterministic");
    std::vector<int> all;
    for (const auto* part : {&a.train, &a.validation, &a.test}) {
        all.insert(all.end(), part->begin(), part->end());
    }
    std::sort(all.begin(), all.end());
    o.check(all == items, "parts are not a partition of the input");
    return o;
}

train::BackendLoadSpec small_spec(const std::string& model, int rank, double alpha) {
    train::BackendLoadSpec s;
    s.base_model_id = model;
    s.weight_precision = train::WeightPrecision::kThirtyTwoBit;
    s.compute_precision = train::ComputePrecision::kFloat32;
    s.lora.rank = rank;
    s.lora.alpha = alpha;
    s.seed = 3;
    return s;
}

std::vector<train::TrainingSequence> random_sequences(std::size_t n, std::uint64_t seed, std::size_t max_len) {
    Rng rng(seed);
    std::vector<train::TrainingSequence> out;
    for (std::size_t i = 0; i < n; ++i) {
        train::TrainingSequence s;
        const std::size_t len = 4 + rng.below(max_len - 4);
        for (std::size_t t = 0; t < len; ++t) {
            s.tokens.push_back(static_cast<dataset::TokenId>(4 + rng.below(59)));
            s.label_mask.push_back(t == 0 ? 0 : 1);
        }
        out.push_back(std::move(s));
    }
    return out;
}

Outcome lora_identity() {
    Outcome o;
    Rng rng(99);
    std::size_t mismatches = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const int d_in = 4 + static_cast<int>(rng.below(20));
        const int d_out = 4 + static_cast<int>(rng.below(20));
        const auto adapter = tune::LoraAdapter::init(d_in, d_out, 1 + static_cast<int>(rng.below(8)), 16.0,
                                                     static_cast<std::uint64_t>(trial));
        tune::Vector x(d_in);
        tune::Vector base(d_out);
        for (auto& v : x) v = rng.normal() * 3.0;
        for (auto& v : base) v = rng.normal() * 3.0;
        const tune::Vector out = tune::lora_forward(x, base, adapter);
        mismatches += std::memcmp(out.data(), base.data(), sizeof(double) * static_cast<std::size_t>(d_out)) != 0;
    }
    o.check(mismatches == 0, std::to_string(mismatches) + " layer outputs differ from base");

    // Whole-model check: enabled zero-B adapters vs adapters switched off.
    train::ToyBackend backend;
    backend.load(small_spec("toy-16x32", 4, 8.0));
    const auto seqs = random_sequences(100, 5, 40);
    backend.set_adapters_enabled(true);
    const auto with = backend.forward_with_loss(seqs).nll_sum;
    backend.set_adapters_enabled(false);
    const auto without = backend.forward_with_loss(seqs).nll_sum;
    o.check(std::memcmp(with.data(), without.data(), sizeof(double) * with.size()) == 0,
            "model losses differ with zero-B adapters");
    o.note("100 layer inputs, 100 model inputs");
    return o;
}

std::vector<double> flat(const train::AdapterState& s) {
    std::vector<double> out;
    for (const auto& [name, m] : s.tensors) {
        out.insert(out.end(), m.data(), m.data() + m.size());
    }
    return out;
}

void set_flat(train::AdapterState& s, const std::vector<double>& values) {
    std::size_t k = 0;
    for (auto& [name, m] : s.tensors) {
        for (Eigen::Index i = 0; i < m.size(); ++i) {
            m.data()[i] = values[k++];
        }
    }
}

train::AdapterState randomized_adapter(train::ModelBackend& backend, std::uint64_t seed, double scale) {
    train::AdapterState s = backend.save_adapter();
    Rng rng(seed);
    for (auto& [name, m] : s.tensors) {
        for (Eigen::Index i = 0; i < m.size(); ++i) {
            m.data()[i] = rng.normal() * scale;
        }
    }
    return s;
}

Outcome lora_gradients() {
    Outcome o;
    train::ToyBackend backend;
    backend.load(small_spec("toy-8x12", 2, 4.0));
    backend.set_mode(train::Mode::kTrain);
    train::AdapterState state = randomized_adapter(backend, 17, 0.3);
    backend.load_adapter(state);
    const auto batch = random_sequences(3, 21, 24);
    const std::vector<double> weights = {1.0, 0.5, 2.0};

    backend.zero_grad();
    backend.forward_with_loss(batch);
    backend.backward(weights);
    const auto analytic = backend.gradient();

    const auto objective = [&](const std::vector<double>& params) {
        train::AdapterState s = state;
        set_flat(s, params);
        backend.load_adapter(s);
        const auto f = backend.forward_with_loss(batch);
        double total = 0.0;
        for (std::size_t i = 0; i < weights.size(); ++i) {
            total += weights[i] * f.nll_sum[i];
        }
        return total;
    };
    const auto base = flat(state);
    o.check(base.size() == analytic.size(), "gradient length differs from adapter size");
    if (!o.pass) {
        return o;
    }
    constexpr double h = 1e-5;
    double diff2 = 0.0;
    double ref2 = 0.0;
    double worst = 0.0;
    for (std::size_t i = 0; i < base.size(); ++i) {
        auto plus = base;
        auto minus = base;
        plus[i] += h;
        minus[i] -= h;
        const double fd = (objective(plus) - objective(minus)) / (2.0 * h);
        diff2 += (fd - analytic[i]) * (fd - analytic[i]);
        ref2 += fd * fd;
        const double scale = std::max(std::abs(fd), std::abs(analytic[i]));
        if (scale > 1e-3) {
            worst = std::max(worst, std::abs(fd - analytic[i]) / scale);
        }
    }
    backend.load_adapter(state);
    const double rel = std::sqrt(diff2 / ref2);
    o.check(rel <= 1e-4, "relative error " + fmt(rel));
    o.check(worst <= 1e-4, "worst element relative error " + fmt(worst));
    o.note(std::to_string(base.size()) + " params, norm rel " + fmt(rel) + ", worst elem " + fmt(worst));
    return o;
}

Outcome nf4() {
    Outcome o;
    const auto cb = tune::Nf4Codebook::standard();
    bool ascending = true;
    for (std::size_t i = 1; i < 16; ++i) {
        ascending = ascending && cb.levels[i] > cb.levels[i - 1];
    }
    o.check(ascending, "codebook not strictly ascending");
    o.check(cb.levels.front() == -1.0 && cb.levels.back() == 1.0, "endpoints are not -1/+1");
    o.check(std::count(cb.levels.begin(), cb.levels.end(), 0.0) == 1, "no single zero level");
    double max_gap = 0.0;
    for (std::size_t i = 1; i < 16; ++i) {
        max_gap = std::max(max_gap, cb.levels[i] - cb.levels[i - 1]);
    }

    Rng rng(4242);
    std::vector<double> values(100000);
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double scale = std::pow(10.0, static_cast<double>(static_cast<int>((i / cb.block_size) % 7)) - 3.0);
        values[i] = rng.normal() * scale;
    }
    const auto blocks = tune::nf4_quantize_tensor(values, cb);
    const auto back = tune::nf4_dequantize_tensor(blocks, cb);
    o.check(back.size() == values.size(), "roundtrip changed length");
    std::size_t violations = 0;
    std::size_t nearest_wrong = 0;
    double worst_ratio = 0.0;
    for (std::size_t start = 0; start < values.size() && back.size() == values.size(); start += cb.block_size) {
        const std::size_t end = std::min(values.size(), start + cb.block_size);
        double absmax = 0.0;
        for (std::size_t i = start; i < end; ++i) {
            absmax = std::max(absmax, std::abs(values[i]));
        }
        const double bound = absmax * max_gap / 2.0;
        for (std::size_t i = start; i < end; ++i) {
            const double err = std::abs(values[i] - back[i]);
            violations += err > bound * (1.0 + 1e-12) ? 1 : 0;
            worst_ratio = std::max(worst_ratio, bound > 0 ? err / bound : 0.0);
            // Exhaustive nearest-level search, ties to the lower index.
            const double normalized = absmax > 0 ? values[i] / absmax : 0.0;
            std::size_t best = 0;
            for (std::size_t k = 1; k < 16; ++k) {
                if (std::abs(normalized - cb.levels[k]) < std::abs(normalized - cb.levels[best])) {
                    best = k;
                }
            }
            nearest_wrong += tune::nf4_nearest_index(normalized, cb) != best ? 1 : 0;
        }
    }
    o.check(violations == 0, std::to_string(violations) + " elements exceed the error bound");
    o.check(nearest_wrong == 0, std::to_string(nearest_wrong) + " nearest-level mismatches");
    o.note("worst err/bound " + fmt(worst_ratio));
    return o;
}

Outcome accumulation() {
    Outcome o;
    train::ToyBackend backend;
    backend.load(small_spec("toy-16x32", 4, 8.0));
    backend.set_mode(train::Mode::kTrain);
    backend.load_adapter(randomized_adapter(backend, 8, 0.2));
    const auto batch = random_sequences(8, 31, 48);

    const auto grad_of = [&](std::span<const train::TrainingSequence> seqs) {
        backend.zero_grad();
        backend.forward_with_loss(seqs);
        // Mean over sequences of the per-sequence mean token loss.
        std::vector<double> w;
        for (const auto& s : seqs) {
            w.push_back(1.0 / (static_cast<double>(seqs.size()) * static_cast<double>(s.label_count())));
        }
        backend.backward(w);
        return backend.gradient();
    };
    const auto full = grad_of(batch);
    std::vector<std::vector<double>> micro;
    for (std::size_t m = 0; m < 4; ++m) {
        micro.push_back(grad_of(std::span(batch).subspan(2 * m, 2)));
    }
    const auto accumulated = tune::accumulate_gradients(micro, {2, 4});

    // Oracle: per-sequence gradients averaged by hand.
    std::vector<double> manual(full.size(), 0.0);
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto g = grad_of(std::span(batch).subspan(i, 1));
        for (std::size_t j = 0; j < g.size(); ++j) {
            manual[j] += g[j] / 8.0;
        }
    }
    const auto rel = [](const std::vector<double>& a, const std::vector<double>& b) {
        double d = 0.0;
        double n = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            d += (a[i] - b[i]) * (a[i] - b[i]);
            n += b[i] * b[i];
        }
        return std::sqrt(d / n);
    };
    const double r1 = rel(accumulated, full);
    const double r2 = rel(full, manual);
    o.check(r1 <= 1e-6, "4x2 vs 8: " + fmt(r1));
    o.check(r2 <= 1e-6, "full batch vs per-sequence mean: " + fmt(r2));
    o.note("4x2 vs 8 rel " + fmt(r1));
    return o;
}

Outcome dpo_loss() {
    Outcome o;
    const double ln2 = std::log(2.0);
    Rng rng(5);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const double c = -200.0 * rng.uniform();
        const double r = -200.0 * rng.uniform();
        const double beta = 0.01 + rng.uniform();
        worst = std::max(worst, std::abs(tune::dpo_loss({c, r, c, r, beta}) - ln2));
    }
    o.check(worst <= 1e-9, "policy==reference off ln2 by " + fmt(worst));

    double previous = std::numeric_limits<double>::infinity();
    bool monotone = true;
    double oracle_gap = 0.0;
    for (int i = 0; i < 100; ++i) {
        const double delta = -20.0 + 40.0 * i / 99.0;  // policy chosen shift
        const tune::DpoLossInputs in{-10.0 + delta, -12.0, -10.0, -12.0, 0.1};
        const double loss = tune::dpo_loss(in);
        const double margin = 0.1 * delta;
        oracle_gap = std::max(oracle_gap, std::abs(loss - std::log1p(std::exp(-margin))));
        monotone = monotone && loss < previous;
        previous = loss;
    }
    o.check(monotone, "loss not strictly decreasing in margin");
    o.check(oracle_gap <= 1e-12, "loss differs from log(1+exp(-m)) by " + fmt(oracle_gap));

    TempDir dir("dt-dpo0");
    train::ToyBackend backend;
    auto config = toy_config();
    config.max_steps = 1;
    const auto prefs = synthetic_preferences(20, 3, backend.tokenizer());
    const auto run = train::run_dpo(config, prefs, {}, {"dpo-zero", 128}, backend, {dir.path(), {}});
    const bool has_step0 = !run.evals.empty() && run.evals.front().step == 0;
    o.check(has_step0, "no step-0 evaluation recorded");
    if (has_step0) {
        o.check(std::abs(run.evals.front().loss - ln2) <= 1e-6, "step-0 loss " + fmt(run.evals.front().loss));
    }
    if (!run.train_losses.empty()) {
        o.check(std::abs(run.train_losses.front().loss - ln2) <= 1e-6,
                "first step loss " + fmt(run.train_losses.front().loss));
    }
    o.note("max |loss-ln2| " + fmt(worst));
    return o;
}

Outcome toy_convergence() {
    Outcome o;
    TempDir dir("dt-conv");
    train::ToyBackend backend;
    const auto config = toy_config("toy");
    const auto seqs = to_sequences(synthetic_pairs(200, 1), backend.tokenizer());
    const auto val = to_sequences(synthetic_pairs(40, 2), backend.tokenizer());

    backend.load(train::load_spec(config));
    backend.reset_adapter(config.seed);
    const double before = train::evaluate_loss(std::nullopt, seqs, backend);
    const auto sft = train::run_sft(config, seqs, val, {"conv-sft", 128}, backend, {dir.path(), {}});
    const auto ckpt = sft.latest_checkpoint();
    o.check(ckpt.has_value(), "SFT wrote no checkpoint");
    if (!ckpt) {
        return o;
    }
    const double after = train::evaluate_loss(ckpt->path, seqs, backend);
    const double drop = 1.0 - after / before;
    o.check(sft.train_losses.size() == 100, "SFT ran " + std::to_string(sft.train_losses.size()) + " steps");
    o.check(drop >= 0.20, "SFT loss drop " + fmt(drop));

    auto dpo_config = config;
    dpo_config.seed = 12;
    const auto prefs = synthetic_preferences(200, 4, backend.tokenizer());
    const auto dpo = train::run_dpo(dpo_config, prefs, ckpt->path, {"conv-dpo", 128}, backend, {dir.path(), {}});
    const double accuracy = dpo.evals.empty() ? 0.0 : dpo.evals.back().preference_accuracy.value_or(0.0);
    o.check(!dpo.evals.empty() && dpo.evals.back().step == 100, "DPO did not finish 100 steps");
    o.check(accuracy > 0.6, "DPO preference accuracy " + fmt(accuracy));
    o.note("SFT loss " + fmt(before) + " -> " + fmt(after) + " (-" + fmt(100 * drop) + "%), DPO accuracy " +
           fmt(accuracy));
    return o;
}

Outcome geval() {
    Outcome o;
    const auto expect = [](const std::vector<std::pair<int, double>>& probs) {
        double s = 0.0;
        for (const auto& [score, p] : probs) s += score * p;
        return s;
    };
    struct Case {
        std::vector<std::pair<int, double>> probs;
    };
    const std::vector<Case> cases = {
        {{{5, 0.6}, {4, 0.4}}},
        {{{1, 1.0}}},
        {{{1, 0.2}, {2, 0.2}, {3, 0.2}, {4, 0.2}, {5, 0.2}}},
    };
    const std::vector<double> anchors = {4.6, 1.0, 3.0};
    for (std::size_t i = 0; i < cases.size(); ++i) {
        std::vector<std::pair<int, double>> lp;
        std::vector<std::pair<std::string, double>> top;
        for (const auto& [score, p] : cases[i].probs) {
            lp.emplace_back(score, std::log(p));
            top.emplace_back(std::to_string(score), std::log(p));
        }
        const auto dist = eval::distribution_from_logprobs(lp);
        const double got = dist ? eval::weighted_score(*dist) : -1.0;
        o.check(std::abs(got - expect(cases[i].probs)) <= 1e-9 && std::abs(got - anchors[i]) <= 1e-9,
                "fixture " + std::to_string(i) + " gave " + fmt(got));
        // Same numbers through the judge path.
        ScriptedJudge judge([&](const judge::JudgeRequest&, std::size_t) { return score_answer(top[0].first, top); });
        const auto r = eval::score_response(eval::default_criteria()[0], "line", "reply", judge);
        o.check(r.status == eval::ScoreStatus::kOk && std::abs(r.weighted_score - anchors[i]) <= 1e-9,
                "judge path fixture " + std::to_string(i) + " gave " + fmt(r.weighted_score));
    }

    Rng rng(77);
    double worst = 0.0;
    for (int t = 0; t < 2000; ++t) {
        std::vector<std::pair<int, double>> a;
        std::vector<std::pair<int, double>> b;
        const double shift = rng.uniform(-50.0, 50.0);
        for (int s = 1; s <= 5; ++s) {
            const double v = rng.uniform(-20.0, 0.0);
            a.emplace_back(s, v);
            b.emplace_back(s, v + shift);
        }
        const auto da = eval::distribution_from_logprobs(a);
        const auto db = eval::distribution_from_logprobs(b);
        // Oracle softmax.
        double mx = -1e300;
        for (const auto& e : a) mx = std::max(mx, e.second);
        double z = 0.0;
        for (const auto& e : a) z += std::exp(e.second - mx);
        for (std::size_t k = 0; k < 5; ++k) {
            const double p = std::exp(a[k].second - mx) / z;
            worst = std::max({worst, std::abs((*da)[k] - (*db)[k]), std::abs((*da)[k] - p)});
        }
    }
    o.check(worst <= 1e-12, "shift invariance off by " + fmt(worst));

    // 10 prompts x 3 variants x 4 criteria through a mock judge.
    std::vector<eval::EvalItem> items;
    for (std::int64_t id = 0; id < 10; ++id) {
        for (auto v : kAllVariants) {
            items.push_back({id, v, "line " + std::to_string(id), "reply " + std::to_string(id) + to_string(v)});
        }
    }
    const auto criteria = eval::default_criteria();
    const auto mock = [](const judge::JudgeRequest& req, std::size_t) {
        const double bias = static_cast<double>(user_text(req).size() % 7) / 7.0;
        return score_answer("3", {{"3", -0.5}, {"4", -1.0 - bias}, {"2", -2.0}, {"5", -3.0}, {"1", -4.0}});
    };
    const auto unique_rows = [](const fs::path& p, std::size_t& rows) {
        std::set<std::string> keys;
        rows = 0;
        for (const auto& r : read_jsonl(p)) {
            ++rows;
            keys.insert(r.at("prompt_id").dump() + r.at("model_variant").dump() + r.at("criterion").dump());
        }
        return keys.size();
    };
    TempDir dir("dt-geval");
    ScriptedJudge judge(mock);
    const auto first = eval::run_geval(items, criteria, judge, dir / "results.jsonl");
    const auto again = eval::run_geval(items, criteria, judge, dir / "results.jsonl");
    std::size_t rows = 0;
    const std::size_t keys = unique_rows(dir / "results.jsonl", rows);
    o.check(first.results.size() == 120 && first.newly_scored == 120, "first run " + std::to_string(first.results.size()));
    o.check(again.newly_scored == 0 && again.reused == 120 && again.results.size() == 120, "rerun rescored");
    o.check(rows == 120 && keys == 120, "results file has " + std::to_string(rows) + " rows");
    o.check(judge.calls() == 120, "judge called " + std::to_string(judge.calls()) + " times");

    // Killed after 57 results, then resumed.
    TempDir killed("dt-geval-kill");
    ScriptedJudge dying([&](const judge::JudgeRequest& req, std::size_t call) {
        if (call >= 57) {
            throw std::runtime_error("killed");
        }
        return mock(req, call);
    });
    bool aborted = false;
    try {
        eval::run_geval(items, criteria, dying, killed / "results.jsonl", {1, 5, 0.0, 0.0});
    } catch (const std::runtime_error&) {
        aborted = true;
    }
    std::size_t partial_rows = 0;
    unique_rows(killed / "results.jsonl", partial_rows);
    ScriptedJudge healthy(mock);
    const auto resumed = eval::run_geval(items, criteria, healthy, killed / "results.jsonl");
    std::size_t final_rows = 0;
    const std::size_t final_keys = unique_rows(killed / "results.jsonl", final_rows);
    o.check(aborted && partial_rows == 57, "kill left " + std::to_string(partial_rows) + " rows");
    o.check(resumed.newly_scored == 63 && resumed.reused == 57, "resume scored " + std::to_string(resumed.newly_scored));
    o.check(final_rows == 120 && final_keys == 120, "after resume " + std::to_string(final_rows) + " rows");
    o.note("120 results, rerun reused 120, resume after 57 scored " + std::to_string(resumed.newly_scored));
    return o;
}

Outcome ballots() {
    Outcome o;
    std::vector<eval::HumanBallot> fixture_ballots;
    std::map<std::string, int> oracle;
    for (const auto& row : read_jsonl(fixture("ballots_52_37_11.jsonl"))) {
        fixture_ballots.push_back(eval::ballot_from_json(row));
        // Oracle straight from the JSON: the name at the selected position.
        oracle[row.at("order").at(row.at("selected_position").get<std::size_t>()).get<std::string>()] += 1;
    }
    const auto tally = eval::tally_ballots(fixture_ballots);
    const std::map<ModelVariant, double> want = {
        {ModelVariant::kDpo, 0.52}, {ModelVariant::kSft, 0.37}, {ModelVariant::kBase, 0.11}};
    for (const auto& [v, p] : want) {
        const double got = tally.proportions.count(v) ? tally.proportions.at(v) : -1.0;
        o.check(got == p, std::string(to_string(v)) + " proportion " + fmt(got));
        o.check(static_cast<double>(oracle[to_string(v)]) / 100.0 == p, std::string("oracle disagrees for ") + to_string(v));
    }

    // Position-fixed picker over seeded display orders.
    std::vector<eval::BallotItem> items;
    for (std::int64_t id = 0; id < 3000; ++id) {
        items.push_back({id, "p", {{ModelVariant::kBase, "a"}, {ModelVariant::kSft, "b"}, {ModelVariant::kDpo, "c"}}});
    }
    std::string answers;
    for (int i = 0; i < 3000; ++i) answers += "1\n";
    std::istringstream in(answers);
    std::ostringstream sink;
    const auto session = eval::collect_ballots(items, "sim", 13, in, sink);
    const auto sim = eval::tally_ballots(session.ballots);
    std::string shares;
    for (auto v : kAllVariants) {
        const double p = sim.proportions.count(v) ? sim.proportions.at(v) : 0.0;
        o.check(std::abs(p - 1.0 / 3.0) <= 0.05, std::string(to_string(v)) + " simulated share " + fmt(p));
        shares += std::string(shares.empty() ? "" : "/") + fmt(p);
    }
    o.check(sim.total == 3000, "simulation accepted " + std::to_string(sim.total));
    o.note("fixture 0.52/0.37/0.11, simulated " + shares);
    return o;
}

Outcome sampling_filter() {
    Outcome o;
    Rng rng(123);
    // top_k = 1 -> one-hot at the argmax.
    for (int t = 0; t < 500; ++t) {
        std::vector<double> logits(2 + rng.below(40));
        for (auto& v : logits) v = rng.normal() * 4.0;
        serve::GenerationParams p{0.05 + 2.0 * rng.uniform(), 1, 0.05 + 0.95 * rng.uniform(), 8};
        const auto probs = serve::filter_logits(logits, p);
        const auto arg = static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
        for (std::size_t i = 0; i < probs.size(); ++i) {
            if (probs[i] != (i == arg ? 1.0 : 0.0)) {
                o.check(false, "top_k=1 is not one-hot at the argmax");
                t = 500;
                break;
            }
        }
    }
    // Identity: temperature 1, no top-k, top_p 1 -> plain softmax.
    double identity_gap = 0.0;
    std::size_t identity_bits_differ = 0;
    for (int t = 0; t < 500; ++t) {
        std::vector<double> logits(1 + rng.below(40));
        for (auto& v : logits) v = rng.normal() * 4.0;
        const auto probs = serve::filter_logits(logits, {1.0, 0, 1.0, 8});
        const double mx = *std::max_element(logits.begin(), logits.end());
        double z = 0.0;
        for (double v : logits) z += std::exp(v - mx);
        for (std::size_t i = 0; i < logits.size(); ++i) {
            identity_gap = std::max(identity_gap, std::abs(probs[i] - std::exp(logits[i] - mx) / z));
            identity_bits_differ += probs[i] != std::exp(logits[i] - mx) / z;
        }
    }
    o.check(identity_bits_differ == 0,
            std::to_string(identity_bits_differ) + " identity outputs not bit-equal, max gap " + fmt(identity_gap));

    const std::vector<double> fixture_logits = {std::log(0.5), std::log(0.3), std::log(0.2)};
    const auto nucleus = serve::filter_logits(fixture_logits, {1.0, 0, 0.7, 8});
    const std::vector<double> expected = {0.5 / 0.8, 0.3 / 0.8, 0.0};
    for (std::size_t i = 0; i < 3; ++i) {
        o.check(std::abs(nucleus[i] - expected[i]) <= 1e-9,
                "top_p fixture[" + std::to_string(i) + "] = " + fmt(nucleus[i]));
    }

    std::size_t bad = 0;
    for (int t = 0; t < 10000; ++t) {
        const std::size_t v = 1 + rng.below(64);
        std::vector<double> logits(v);
        for (auto& x : logits) x = rng.normal() * (0.1 + 10.0 * rng.uniform());
        serve::GenerationParams p{0.01 + 3.0 * rng.uniform(), static_cast<int>(rng.below(v + 2)),
                                  1.0 - 0.999 * rng.uniform(), 8};
        const auto probs = serve::filter_logits(logits, p);
        double sum = 0.0;
        std::size_t nonzero = 0;
        bool ok = probs.size() == v;
        for (double q : probs) {
            ok = ok && std::isfinite(q) && q >= 0.0;
            sum += q;
            nonzero += q > 0.0 ? 1 : 0;
        }
        ok = ok && std::abs(sum - 1.0) <= 1e-9 && nonzero >= 1;
        ok = ok && (p.top_k == 0 || nonzero <= static_cast<std::size_t>(p.top_k));
        bad += ok ? 0 : 1;
    }
    o.check(bad == 0, std::to_string(bad) + " of 10^4 random cases are not probability vectors");
    o.note("identity gap " + fmt(identity_gap) + ", nucleus (" + fmt(nucleus[0]) + "," + fmt(nucleus[1]) + "," +
           fmt(nucleus[2]) + ")");
    return o;
}

Outcome serve_contract() {
    Outcome o;
    serve::ServiceConfig config;
    config.variants = {{ModelVariant::kBase, {}}, {ModelVariant::kSft, {}}, {ModelVariant::kDpo, {}}};
    std::atomic<int> loads{0};
    serve::ChatService service(config, [&](ModelVariant v, const serve::VariantSpec&) {
        loads.fetch_add(1);
        return std::make_unique<MockGenerator>(to_string(v), 500);
    });
    serve::HttpServer server(service, {"127.0.0.1", 0, "*"});
    const int port = server.start();
    httplib::Client client("127.0.0.1", port);
    client.set_read_timeout(10, 0);

    const auto get_json = [&](const std::string& path, int& status) {
        auto res = client.Get(path);
        status = res ? res->status : -1;
        return res ? Json::parse(res->body, nullptr, false) : Json();
    };
    const auto post_json = [&](const std::string& path, const Json& body, int& status) {
        auto res = client.Post(path, body.dump(), "application/json");
        status = res ? res->status : -1;
        return res ? Json::parse(res->body, nullptr, false) : Json();
    };
    int status = 0;
    Json health = get_json("/health", status);
    o.check(status == 200 && health.value("status", "") == "cold", "health before first request is not cold");

    Json conv = post_json("/conversations", Json::object(), status);
    o.check(status == 201 && conv.contains("conversation_id"), "create conversation failed");
    const std::string id = conv.value("conversation_id", "missing");

    Json chat = post_json("/conversations/" + id + "/messages",
                          {{"text", "Where were you last night?"}, {"params", {{"max_new_tokens", 64}}}}, status);
    const Json msg = chat.value("message", Json::object());
    const std::size_t tokens = msg.value("token_count", std::size_t{9999});
    const std::string text = msg.value("text", "");
    const auto words = static_cast<std::size_t>(std::count(text.begin(), text.end(), ' ') + (text.empty() ? 0 : 1));
    o.check(status == 200, "chat returned HTTP " + std::to_string(status));
    o.check(tokens <= 64 && words <= 64 && !text.empty(), "response has " + std::to_string(words) + " tokens");

    health = get_json("/health", status);
    o.check(health.value("status", "") == "ready" && health.value("available_variants", 0) == 3,
            "health after chat is not ready");

    std::string seen;
    for (auto v : kAllVariants) {
        const std::string name = to_string(v);
        Json regen = post_json("/conversations/" + id + "/regenerate", {{"variant", name}}, status);
        const Json m = regen.value("message", Json::object());
        o.check(status == 200 && m.value("variant", "") == name && m.value("text", "").rfind(name, 0) == 0,
                "regenerate with " + name + " failed (HTTP " + std::to_string(status) + ")");
        seen += name + " ";
    }
    conv = get_json("/conversations/" + id, status);
    o.check(conv.value("messages", Json::array()).size() == 2, "conversation does not hold one exchange");
    o.check(conv.value("audit_trail", Json::array()).size() == 3, "audit trail does not hold the replaced replies");
    o.check(loads.load() == 3, "variants loaded " + std::to_string(loads.load()) + " times");
    server.stop();
    o.note("chat " + std::to_string(tokens) + " tokens, regenerated " + seen + "cold->ready");
    return o;
}

// Splits a verdict prompt back into the two texts the judge saw.
std::pair<std::string, std::string> shown(const std::string& prompt) {
    const auto a = prompt.find("Response 1:\n");
    const auto b = prompt.find("\n\nResponse 2:\n");
    const auto c = prompt.find("\n\n", b + 14);
    if (a == std::string::npos || b == std::string::npos || c == std::string::npos) {
        return {};
    }
    return {prompt.substr(a + 12, b - a - 12), prompt.substr(b + 14, c - b - 14)};
}

judge::JudgeResponse numbered_list(const judge::JudgeRequest& req, std::size_t call) {
    static const std::regex count_re(R"((\d+) new lines)");
    std::smatch m;
    const std::string& text = user_text(req);
    const int n = std::regex_search(text, m, count_re) ? std::stoi(m[1]) : 5;
    std::string out;
    for (int i = 1; i <= n; ++i) {
        out += std::to_string(i) + ". Line " + std::to_string(call) + "-" + std::to_string(i) + ", where now?\n";
    }
    return text_response(out);
}

Outcome prefgen_invariants() {
    Outcome o;
    std::vector<prefgen::CandidatePair> pairs;
    for (std::int64_t id = 0; id < 1000; ++id) {
        prefgen::CandidatePair p;
        p.prompt_id = id;
        p.prompt = "prompt " + std::to_string(id);
        p.response_a = "alpha " + std::to_string(id * 7919 % 1000);
        p.response_b = "beta " + std::to_string(id * 104729 % 1000);
        pairs.push_back(p);
    }

    // Always "first": the chosen text must be whatever was shown first.
    std::size_t wrong = 0;
    std::size_t ab = 0;
    std::mutex mu;
    std::map<std::int64_t, std::string> shown_first;
    for (const auto& p : pairs) {
        ScriptedJudge first([&](const judge::JudgeRequest& req, std::size_t) {
            std::lock_guard lock(mu);
            shown_first[p.prompt_id] = shown(user_text(req)).first;
            return text_response("first");
        });
        const auto rec = prefgen::adjudicate(p, first, 99);
        if (!rec) {
            ++wrong;
            continue;
        }
        const bool was_ab = rec->presentation_order == prefgen::PresentationOrder::kAb;
        ab += was_ab ? 1 : 0;
        const std::string& expected = was_ab ? p.response_a : p.response_b;
        wrong += (rec->chosen != expected || rec->chosen != shown_first[p.prompt_id] ||
                  rec->rejected != (was_ab ? p.response_b : p.response_a))
                     ? 1
                     : 0;
    }
    o.check(wrong == 0, std::to_string(wrong) + " records mis-mapped under the always-first judge");
    o.check(ab > 0 && ab < pairs.size(), "only one presentation order used");

    // Position-agnostic judge: prefers the lexicographically smaller text.
    std::size_t said_first = 0;
    for (const auto& p : pairs) {
        ScriptedJudge fair([&](const judge::JudgeRequest& req, std::size_t) {
            const auto [x, y] = shown(user_text(req));
            if (x < y) {
                ++said_first;
            }
            return text_response(x < y ? "first" : "second");
        });
        const auto rec = prefgen::adjudicate(p, fair, 99);
        wrong += (!rec || rec->chosen != std::min(p.response_a, p.response_b)) ? 1 : 0;
    }
    const double first_share = static_cast<double>(said_first) / 1000.0;
    const double ab_share = static_cast<double>(ab) / 1000.0;
    o.check(wrong == 0, "position-agnostic judge verdicts mis-mapped");
    o.check(first_share >= 0.45 && first_share <= 0.55, "first-position share " + fmt(first_share));
    o.check(ab_share >= 0.45 && ab_share <= 0.55, "ab order share " + fmt(ab_share));

    // Resume after the judge dies mid-verdicts.
    TempDir dir("dt-prefgen");
    prefgen::PrefgenConfig config;
    config.prompt_count = 60;
    config.prompts.batch_size = 25;
    config.seed = 5;
    config.concurrency = 3;
    config.params.max_new_tokens = 12;
    MockGenerator generator("cand", 10);
    std::atomic<int> verdicts{0};
    const auto script = [&](bool die) {
        return [&, die](const judge::JudgeRequest& req, std::size_t call) {
            const auto& text = user_text(req);
            if (text.find("Response 1:") != std::string::npos) {
                if (die && verdicts.fetch_add(1) >= 20) {
                    throw judge::JudgeError("connection reset", false);
                }
                const auto [x, y] = shown(text);
                return text_response(x < y ? "first" : "second");
            }
            return numbered_list(req, call);
        };
    };
    ScriptedJudge dying(script(true));
    prefgen::PrefgenSummary partial;
    try {
        partial = prefgen::run_prefgen(config, dying, generator, dir.path());
    } catch (const judge::JudgeError&) {
    }
    const auto before = read_jsonl(dir / "verdicts.jsonl").size();
    ScriptedJudge healthy(script(false));
    const auto done = prefgen::run_prefgen(config, healthy, generator, dir.path());
    const auto final_rows = read_jsonl(dir / "preferences.jsonl");
    std::set<std::int64_t> ids;
    for (const auto& r : final_rows) {
        ids.insert(r.at("prompt_id").get<std::int64_t>());
    }
    std::set<std::int64_t> verdict_ids;
    const auto verdict_rows = read_jsonl(dir / "verdicts.jsonl");
    for (const auto& r : verdict_rows) {
        verdict_ids.insert(r.at("prompt_id").get<std::int64_t>());
    }
    o.check(before < done.candidates, "first run was not interrupted");
    o.check(ids.size() == final_rows.size(), "duplicate prompt_ids in preferences");
    o.check(verdict_ids.size() == verdict_rows.size(), "duplicate prompt_ids in the verdict log");
    o.check(final_rows.size() == done.candidates && done.records == done.candidates,
            std::to_string(final_rows.size()) + " records for " + std::to_string(done.candidates) + " candidates");
    o.check(healthy.calls() == done.candidates - before, "resume re-asked completed verdicts");
    o.note("always-first ok, first share " + fmt(first_share) + ", resume " + std::to_string(before) + "->" +
           std::to_string(final_rows.size()));
    return o;
}

struct Criterion {
    const char* name;
    double limit_seconds;
    Outcome (*run)();
};

}  // namespace

int main() {
    const std::vector<Criterion> criteria = {
        {"corpus-pairs", 1, corpus_pairs},
        {"packing", 10, packing},
        {"split", 1, split},
        {"lora-identity", 1, lora_identity},
        {"lora-gradients", 10, lora_gradients},
        {"nf4", 5, nf4},
        {"gradient-accumulation", 5, accumulation},
        {"dpo-loss", 5, dpo_loss},
        {"toy-convergence", 300, toy_convergence},
        {"geval-scoring", 10, geval},
        {"ballot-tally", 10, ballots},
        {"sampling-filter", 10, sampling_filter},
        {"serve-contract", 30, serve_contract},
        {"prefgen-invariants", 30, prefgen_invariants},
    };
    int failed = 0;
    for (const auto& c : criteria) {
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail = std::string("exception: ") + e.what();
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (secs > c.limit_seconds) {
            o.check(false, "took " + fmt(secs) + "s, limit " + fmt(c.limit_seconds) + "s");
        }
        failed += o.pass ? 0 : 1;
        std::printf("%s %-22s %.3fs  %s\n", o.pass ? "PASS" : "FAIL", c.name, secs, o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
