// Copyright 2026 The kdlab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "kdlab/distill/loss.hpp"
#include "kdlab/distill/optimizer.hpp"
#include "kdlab/distill/schedule.hpp"
#include "kdlab/distill/trainer.hpp"
#include "kdlab/io.hpp"
#include "kdlab/model/checkpoint.hpp"
#include "kdlab/numerics/gradcheck.hpp"
#include "test_util.hpp"

using namespace kdlab;
using namespace kdlab::distill;
using numerics::Tensor;

namespace {

// Closed form evaluated directly from its definition, one row at a time.
double oracle_kd(const std::vector<double>& logits, const std::vector<std::uint32_t>& idx,
                 const std::vector<double>& probs, std::uint32_t label, double lambda) {
    double z = 0;
    for (double v : logits) z += std::exp(v);
    auto log_q = [&](std::size_t i) { return logits[i] - std::log(z); };
    double mass = std::accumulate(probs.begin(), probs.end(), 0.0);
    double kl = 0;
    for (std::size_t j = 0; j < idx.size(); ++j) {
        const double p = probs[j] / mass;
        kl += p * (std::log(p) - log_q(idx[j]));
    }
    return lambda * kl + (1 - lambda) * -log_q(label);
}

double eval_loss(const Tensor<double>& logits, const KdTargets& t, double lambda, KdTerms* terms = nullptr) {
    numerics::Tape<double> tape;
    const auto v = tape.leaf(logits);
    return tape.value(sparse_kd_loss(tape, v, t, lambda, terms))[0];
}

model::ModelConfig tiny_config() {
    model::ModelConfig c;
    c.layers = 1;
    c.dim = 16;
    c.mlp_dim = 32;
    c.q_heads = 2;
    c.kv_heads = 1;
    c.seq_len = 16;
    return c;
}

std::vector<logitstore::TokenChunk> tiny_chunks(std::uint64_t seed, std::size_t docs) {
    Rng rng(seed);
    std::vector<logitstore::Document> d;
    for (std::size_t i = 0; i < docs; ++i) {
        logitstore::Document doc(5 + rng.below(30));
        for (auto& t : doc) t = static_cast<std::uint32_t>('a' + rng.below(6));
        d.push_back(doc);
    }
    return logitstore::pack_corpus(d, 16);
}

TrainConfig tiny_train() {
    TrainConfig c;
    c.total_iters = 12;
    c.warmup_iters = 2;
    c.decay_start_iter = 8;
    c.global_batch = 3;
    c.lr_peak = 1e-2;
    c.log_interval = 4;
    return c;
}

}  // namespace

TEST_CASE("KD loss is zero when the student matches the renormalized record") {
    // Student softmax restricted to S equals p~ when the logits outside S are
    // -inf-like and log-probs inside S equal log p~.
    Tensor<double> logits({1, 4});
    logits.at(0, 0) = std::log(0.5);
    logits.at(0, 1) = std::log(0.5);
    logits.at(0, 2) = -200;
    logits.at(0, 3) = -200;
    KdTargets t{2, {0, 1}, {0.3f, 0.3f}, {1}};
    KdTerms terms;
    const double loss = eval_loss(logits, t, 1.0, &terms);
    CHECK(std::fabs(loss) < 1e-12);
    CHECK(std::fabs(terms.kl) < 1e-12);
}

TEST_CASE("lambda 0 is plain cross-entropy") {
    Rng rng(3);
    auto logits = testing::random_tensor<double>({3, 7}, rng);
    KdTargets t{2, {0, 1, 2, 3, 4, 5}, {0.5f, 0.5f, 0.9f, 0.1f, 0.2f, 0.2f}, {6, 2, kIgnoreLabel}};
    double ce = 0;
    for (std::size_t r = 0; r < 2; ++r) {
        double z = 0;
        for (std::size_t v = 0; v < 7; ++v) z += std::exp(logits.at(r, v));
        ce += std::log(z) - logits.at(r, t.labels[r]);
    }
    KdTerms terms;
    CHECK(eval_loss(logits, t, 0.0, &terms) == doctest::Approx(ce / 2).epsilon(1e-14));
    CHECK(terms.positions == 2);
}

TEST_CASE("KD loss hand example against the closed-form oracle") {
    Tensor<double> logits({1, 3});  // uniform student
    KdTargets t{2, {0, 1}, {0.6f, 0.3f}, {2}};
    const double want = oracle_kd({0, 0, 0}, {0, 1}, {0.6f, 0.3f}, 2, 0.9);
    // p~ = (2/3, 1/3): 0.9 * (ln 3 - H(p~)) + 0.1 * ln 3.
    const double by_hand = 0.9 * (std::log(3.0) + (2.0 / 3) * std::log(2.0 / 3) + (1.0 / 3) * std::log(1.0 / 3)) +
                           0.1 * std::log(3.0);
    CHECK(want == doctest::Approx(by_hand).epsilon(1e-7));
    CHECK(eval_loss(logits, t, 0.9) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("KD loss matches the oracle on random rows and its KL term is nonnegative") {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t vocab = 3 + rng.below(20), k = 1 + rng.below(vocab);
        auto logits = testing::random_tensor<double>({1, vocab}, rng, 2.0);
        std::vector<std::uint32_t> perm(vocab);
        std::iota(perm.begin(), perm.end(), 0u);
        for (std::size_t i = vocab; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
        KdTargets t{k, {perm.begin(), perm.begin() + k}, {}, {static_cast<std::uint32_t>(rng.below(vocab))}};
        std::vector<double> pd;
        for (std::size_t j = 0; j < k; ++j) {
            t.probs.push_back(static_cast<float>(0.01 + rng.uniform()));
            pd.push_back(t.probs.back());
        }
        const double lambda = rng.uniform();
        std::vector<double> lv(logits.span().begin(), logits.span().end());
        KdTerms terms;
        CHECK(eval_loss(logits, t, lambda, &terms) ==
              doctest::Approx(oracle_kd(lv, t.indices, pd, t.labels[0], lambda)).epsilon(1e-12));
        CHECK(terms.kl >= -1e-15);
    }
}

TEST_CASE("KD loss gradient matches finite differences") {
    Rng rng(5);
    const auto logits = testing::random_tensor<double>({4, 9}, rng);
    KdTargets t;
    t.k = 3;
    t.labels = {1, kIgnoreLabel, 8, 0};
    for (std::size_t r = 0; r < 4; ++r) {
        for (std::uint32_t j = 0; j < 3; ++j) {
            t.indices.push_back((static_cast<std::uint32_t>(r) + 2 * j) % 9);
            t.probs.push_back(static_cast<float>(0.1 + 0.2 * j));
        }
    }
    const std::vector<Tensor<double>> params{logits};
    for (double lambda : {0.0, 0.9, 1.0}) {
        const auto rep = numerics::gradcheck<double>(
            [&](numerics::Tape<double>& tape, std::span<const Var> v) {
                return sparse_kd_loss(tape, v[0], t, lambda);
            },
            params, 1e-6);
        CHECK(rep.max_rel_error < 1e-5);
    }
}

TEST_CASE("KD loss errors") {
    Tensor<double> logits({1, 3});
    CHECK_THROWS_AS(eval_loss(logits, KdTargets{1, {0}, {0.0f}, {1}}, 0.9), Error);
    CHECK_NOTHROW(eval_loss(logits, KdTargets{1, {0}, {0.0f}, {1}}, 0.0));
    CHECK_THROWS_AS(eval_loss(logits, KdTargets{1, {0}, {1.0f}, {3}}, 0.9), Error);
    CHECK_THROWS_AS(eval_loss(logits, KdTargets{1, {5}, {1.0f}, {0}}, 0.9), Error);
    CHECK_THROWS_AS(eval_loss(logits, KdTargets{1, {0}, {1.0f}, {kIgnoreLabel}}, 0.9), Error);
    logits[1] = std::nan("");
    CHECK_THROWS_AS(eval_loss(logits, KdTargets{1, {0}, {1.0f}, {1}}, 0.9), NumericError);
}

TEST_CASE("WSD schedule boundaries and shape") {
    TrainConfig c;
    c.lr_peak = 2e-3;
    c.total_iters = 1000;
    c.warmup_iters = 10;
    c.decay_start_iter = 800;
    c.lr_min_ratio = 0.1;
    CHECK(wsd_lr(0, c) == 0.0);
    CHECK(wsd_lr(10, c) == doctest::Approx(2e-3).epsilon(1e-15));
    CHECK(wsd_lr(405, c) == 2e-3);
    CHECK(wsd_lr(1000, c) == doctest::Approx(2e-4).epsilon(1e-12));
    CHECK(wsd_lr(900, c) == doctest::Approx(1.1e-3).epsilon(1e-12));
    CHECK_THROWS_AS(wsd_lr(1001, c), Error);

    double prev = wsd_lr(c.decay_start_iter, c);
    for (std::size_t s = 0; s < c.total_iters; ++s) {
        const double a = wsd_lr(s, c), b = wsd_lr(s + 1, c);
        CHECK(std::fabs(a - b) <= c.lr_peak / 10.0 + 1e-18);  // steepest slope is warmup
        if (s >= c.decay_start_iter) {
            CHECK(b <= prev);
            prev = b;
        }
    }
}

TEST_CASE("TrainConfig validation") {
    TrainConfig c;
    c.warmup_iters = 90;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = TrainConfig{};
    c.lambda_kd = 1.5;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = TrainConfig{};
    c.lr_peak = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = TrainConfig{};
    const nlohmann::json j = c;
    CHECK(j.get<TrainConfig>() == c);
}

TEST_CASE("AdamW examples") {
    const std::vector<numerics::Shape> shapes{{1}};
    Tensor<float> p({1}), g({1});
    p[0] = 1.0f;
    g[0] = 1.0f;
    // First step: m_hat = g, v_hat = g^2, so the update is lr * g/|g|.
    AdamW opt(0.9, 0.999, 1e-8, 0.0, shapes);
    const ParamSlot slot{"w", &p, &g, true};
    opt.step(std::span(&slot, 1), 0.1, 0);
    CHECK(p[0] == doctest::Approx(0.9).epsilon(1e-6));

    Tensor<float> q({1}), zero({1});
    q[0] = 1.0f;
    AdamW decay(0.9, 0.999, 1e-8, 0.1, shapes);
    const ParamSlot s2{"w", &q, &zero, true};
    decay.step(std::span(&s2, 1), 0.1, 0);
    CHECK(q[0] == doctest::Approx(0.99).epsilon(1e-7));

    Tensor<float> r({1});
    r[0] = 0.5f;
    AdamW none(0.9, 0.999, 1e-8, 0.0, shapes);
    const ParamSlot s3{"w", &r, &zero, true};
    none.step(std::span(&s3, 1), 0.1, 0);
    CHECK(r[0] == 0.5f);
}

TEST_CASE("AdamW aborts on NaN with the iteration number") {
    const std::vector<numerics::Shape> shapes{{2}};
    Tensor<float> p({2}), g({2});
    g[1] = std::nanf("");
    AdamW opt(0.9, 0.999, 1e-8, 0.0, shapes);
    const ParamSlot slot{"w", &p, &g, true};
    try {
        opt.step(std::span(&slot, 1), 0.1, 41);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("41") != std::string::npos);
    }
    CHECK(p[0] == 0.0f);
}

TEST_CASE("optimizer plug-in registry") {
    TrainConfig c;
    c.optimizer = "ademamix-plugin";
    CHECK_THROWS_AS(make_optimizer(c, {}), ConfigError);
    register_optimizer("sgd-test", [](const TrainConfig& cfg, std::span<const numerics::Shape> s) {
        return std::unique_ptr<Optimizer>(new AdamW(0, 0, 1, cfg.weight_decay, s));
    });
    c.optimizer = "sgd-test";
    CHECK(make_optimizer(c, {})->name() == "adamw");
}

TEST_CASE("weight_average examples and linearity") {
    const auto cfg = tiny_config();
    const auto a = model::build_model<float>(cfg, 1);
    std::vector<model::ModelParams<float>> same{a, a, a};
    CHECK(model::params_bit_equal(weight_average(same), a));

    auto zero = model::allocate_params<float>(cfg), two = zero;
    for (auto* t : zero.tensors()) t->fill(0.0f);
    for (auto* t : two.tensors()) t->fill(2.0f);
    const std::vector<model::ModelParams<float>> pair{zero, two};
    const auto mean = weight_average(pair);
    for (const auto* t : mean.tensors()) {
        for (float v : t->span()) CHECK(v == 1.0f);
    }

    // avg(s*x + c) == s*avg(x) + c for a uniform affine map (exact for
    // power-of-two s and values that stay representable).
    Rng rng(2);
    std::vector<model::ModelParams<float>> cks, mapped;
    for (int i = 0; i < 4; ++i) cks.push_back(model::build_model<float>(cfg, 10 + i));
    auto map = [](model::ModelParams<float> p) {
        for (auto* t : p.tensors()) {
            for (float& v : t->span()) v = v * 4.0f;
        }
        return p;
    };
    for (const auto& c : cks) mapped.push_back(map(c));
    CHECK(model::params_bit_equal(weight_average(mapped), map(weight_average(cks))));

    auto other = cfg;
    other.dim = 32;
    other.mlp_dim = 64;
    const std::vector<model::ModelParams<float>> bad{a, model::build_model<float>(other, 1)};
    CHECK_THROWS_AS(weight_average(bad), Error);
    CHECK_THROWS_AS(weight_average({}), Error);
}

TEST_CASE("validation loss examples") {
    auto cfg = tiny_config();
    cfg.tied_embeddings = false;
    auto p = model::build_model<float>(cfg, 4);
    p.head().fill(0.0f);
    const auto val = tiny_chunks(8, 20);
    CHECK(validation_loss(p, val) == doctest::Approx(std::log(257.0)).epsilon(1e-12));

    const auto q = model::build_model<float>(tiny_config(), 4);
    auto reversed = val;
    std::reverse(reversed.begin(), reversed.end());
    CHECK(validation_loss(q, val) == doctest::Approx(validation_loss(q, reversed)).epsilon(1e-12));
    CHECK_THROWS_AS(validation_loss(q, {}), Error);
}

TEST_CASE("training lowers validation loss and resume is bit-identical") {
    testing::TempDir dir("train");
    const auto cfg = tiny_config();
    const auto teacher = model::build_model<float>(cfg, 99);
    const auto chunks = tiny_chunks(1, 60);
    const auto val = tiny_chunks(2, 10);
    logitstore::GenerateOptions g;
    g.k = 8;
    g.perm_seed = 5;
    g.tokens_per_shard = 16 * 5;
    const auto m = logitstore::generate_logit_shards(teacher, chunks, g, dir / "shards");

    auto tc = tiny_train();
    tc.checkpoint_interval = 4;
    TrainOptions o;
    o.out_dir = dir / "full";
    const auto full = train(cfg, m, tc, val, o);
    CHECK(full.checkpoints.size() == 3);
    CHECK(full.metrics.back().val_loss < validation_loss(model::build_model<float>(cfg, tc.seed), val));
    CHECK(full.metrics.back().tokens_seen == 12 * 3 * 16);

    TrainOptions first;
    first.out_dir = dir / "resumed";
    first.stop_at = 6;
    const auto part = train(cfg, m, tc, val, first);
    CHECK(part.checkpoints.back().iter == 4);
    TrainOptions second;
    second.out_dir = dir / "resumed";
    second.resume_from = part.checkpoints.back().path;
    const auto rest = train(cfg, m, tc, val, second);
    CHECK(model::params_bit_equal(rest.params, full.params));
    CHECK(io::read_text(dir / "resumed" / "metrics.csv") == io::read_text(dir / "full" / "metrics.csv"));

    // Deterministic rerun.
    TrainOptions again;
    again.out_dir = dir / "again";
    CHECK(model::params_bit_equal(train(cfg, m, tc, val, again).params, full.params));
}

TEST_CASE("metrics log format") {
    testing::TempDir dir("metrics");
    const auto cfg = tiny_config();
    ChunkSource src(tiny_chunks(3, 30), 257);
    auto tc = tiny_train();
    tc.lambda_kd = 0.0;
    tc.eval_interval = 6;
    TrainOptions o;
    o.out_dir = dir.path();
    train(cfg, src, tc, tiny_chunks(4, 5), o);
    const auto text = io::read_text(dir / "metrics.csv");
    CHECK(text.substr(0, text.find('\n')) == kMetricsHeader);
    // Rows at 4, 6 (eval), 8, 12 (final, eval).
    CHECK(std::count(text.begin(), text.end(), '\n') == 5);
}

TEST_CASE("live-teacher batches equal stored-record batches") {
    testing::TempDir dir("live");
    const auto cfg = tiny_config();
    const auto teacher = model::build_model<float>(cfg, 7);
    const auto chunks = tiny_chunks(9, 20);
    logitstore::GenerateOptions g;
    g.k = 6;
    const auto m = logitstore::generate_logit_shards(teacher, chunks, g, dir.path());
    ManifestSource stored(m);
    ChunkSource live(chunks, 257, &teacher, 6);
    for (int i = 0; i < 3; ++i) {
        const auto a = stored.next_batch(5), b = live.next_batch(5);
        CHECK(a.input.tokens == b.input.tokens);
        CHECK(a.targets.indices == b.targets.indices);
        CHECK(a.targets.probs == b.targets.probs);
        CHECK(a.targets.labels == b.targets.labels);
    }
}

TEST_CASE("train rejects incompatible data and non-finite loss") {
    testing::TempDir dir("reject");
    auto cfg = tiny_config();
    ChunkSource src(tiny_chunks(3, 30), 300);
    auto tc = tiny_train();
    tc.lambda_kd = 0.0;
    TrainOptions o;
    o.out_dir = dir.path();
    CHECK_THROWS_AS(train(cfg, src, tc, {}, o), ConfigError);

    ChunkSource ok(tiny_chunks(3, 30), 257);
    tc.lr_peak = 1e30;
    tc.grad_clip = 0;
    CHECK_THROWS_AS(train(cfg, ok, tc, {}, o), NumericError);
}
