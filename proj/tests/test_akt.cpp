#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "fixtures.hpp"
#include "kt/akt.hpp"
#include "oracles.hpp"

using Catch::Approx;
using kt::InteractionSequence;
using kt::Tensor;
using kt::akt::AKTConfig;
using kt::akt::AKTModel;
using kt::akt::AttentionSpec;
using kt::akt::DecayMode;

namespace {

AKTConfig small_config(DecayMode mode = DecayMode::index_distance, std::size_t layers = 1) {
    AKTConfig cfg;
    cfg.num_kcs = 3;
    cfg.num_questions = 5;
    cfg.embed_dim = 16;
    cfg.num_heads = 2;
    cfg.num_layers = layers;
    cfg.ff_dim = 24;
    cfg.decay = mode;
    cfg.dropout = 0.0;
    return cfg;
}

AKTModel make_model(const AKTConfig& cfg, std::uint64_t seed) {
    AKTModel model(cfg);
    kt::Rng rng(seed);
    model.init_params(rng);
    return model;
}

InteractionSequence random_seq(std::size_t len, const AKTConfig& cfg, kt::Rng& rng) {
    InteractionSequence s;
    s.uid = 1;
    for (std::size_t t = 0; t < len; ++t) {
        s.concepts.push_back(static_cast<int>(rng.index(cfg.num_kcs)));
        s.questions.push_back(static_cast<int>(rng.index(cfg.num_questions)));
        s.responses.push_back(rng.bernoulli(0.6) ? 1 : 0);
        s.timestamps.push_back(static_cast<long long>(t));
        s.is_repeat.push_back(0);
        s.selectmask.push_back(1);
    }
    return s;
}

Tensor identity_matrix(std::size_t n) {
    std::vector<double> v(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
    return Tensor::from({n, n}, v);
}

AttentionSpec causal_spec(std::size_t t_len, bool strict, bool zero_ok = false) {
    AttentionSpec spec;
    spec.allowed.resize(t_len);
    spec.qpos.resize(t_len);
    spec.kpos.resize(t_len);
    for (std::size_t t = 0; t < t_len; ++t) {
        spec.allowed[t] = strict ? t : t + 1;
        spec.qpos[t] = static_cast<double>(t);
        spec.kpos[t] = static_cast<double>(t);
    }
    spec.zero_row_when_empty = zero_ok;
    return spec;
}

}  // namespace

TEST_CASE("Rasch exercise embeddings", "[akt]") {
    kt::akt::RaschEmbeddings tables;
    tables.c = Tensor::from({2, 2}, {1, 2, 3, 4});
    tables.d = Tensor::from({2, 2}, {0.5, -1, 0.25, 0.75});
    tables.mu = Tensor::from({3}, {2.0, 0.0, -1.0});
    tables.q = Tensor::zeros({4, 2});
    tables.f = Tensor::zeros({4, 2});

    SECTION("mu = 0 collapses to the KC embedding") {
        Tensor x = kt::akt::embed_exercise(tables, 1, 1);
        CHECK(x.at(0) == 3.0);
        CHECK(x.at(1) == 4.0);
    }
    SECTION("zero variation vector collapses to the KC embedding") {
        tables.d = Tensor::zeros({2, 2});
        Tensor x = kt::akt::embed_exercise(tables, 0, 0);
        CHECK(x.at(0) == 1.0);
        CHECK(x.at(1) == 2.0);
    }
    SECTION("direct arithmetic") {
        // c=[1,2], d=[0.5,-1], mu=2 -> [2, 0]
        Tensor x = kt::akt::embed_exercise(tables, 0, 0);
        CHECK(x.at(0) == 2.0);
        CHECK(x.at(1) == 0.0);
    }
    SECTION("out-of-range indices") {
        CHECK_THROWS_AS(kt::akt::embed_exercise(tables, 5, 0), kt::Error);
        CHECK_THROWS_AS(kt::akt::embed_exercise(tables, 0, 9), kt::Error);
    }
}

TEST_CASE("Rasch interaction embeddings", "[akt]") {
    kt::Rng rng(3);
    kt::akt::RaschEmbeddings tables;
    const std::size_t k = 2, dim = 3;
    auto rnd = [&](std::vector<std::size_t> shape) {
        Tensor t = Tensor::zeros(shape, true);
        for (double& v : t.data()) v = rng.uniform(-1, 1);
        return t;
    };
    tables.c = rnd({k, dim});
    tables.d = rnd({k, dim});
    tables.mu = rnd({2});
    tables.q = rnd({2 * k, dim});
    tables.f = rnd({2 * k, dim});

    SECTION("mu = 0 selects the q row exactly") {
        tables.mu = Tensor::zeros({2}, true);
        Tensor y = kt::akt::embed_interaction(tables, 1, 1.0, 0, k);
        for (std::size_t i = 0; i < dim; ++i) CHECK(y.at(i) == tables.q.at(k + 1, i));
    }
    SECTION("answers 0 and 1 select distinct rows") {
        Tensor y0 = kt::akt::embed_interaction(tables, 1, 0.0, 0, k);
        Tensor y1 = kt::akt::embed_interaction(tables, 1, 1.0, 0, k);
        bool differ = false;
        for (std::size_t i = 0; i < dim; ++i) differ = differ || y0.at(i) != y1.at(i);
        CHECK(differ);
    }
    SECTION("gradient w.r.t. mu passes finite differences") {
        auto loss_fn = [&]() {
            Tensor y = kt::akt::embed_interaction(tables, 0, 1.0, 1, k);
            Tensor x = kt::akt::embed_exercise(tables, 1, 0);
            return kt::sum(kt::mul(kt::sigmoid(y), kt::tanh(x)));
        };
        CHECK(kt::grad_check_params(loss_fn, {tables.mu}) <= 1e-4);
    }
}

TEST_CASE("rasch penalty", "[akt]") {
    kt::akt::RaschEmbeddings tables;
    tables.mu = Tensor::from({2}, {0.0, 0.0}, true);
    CHECK(kt::akt::rasch_penalty(tables, 1e-5).value() == 0.0);

    tables.mu = Tensor::from({2}, {1.0, -2.0}, true);
    CHECK(kt::akt::rasch_penalty(tables, 1e-5).value() == Approx(5e-5).epsilon(1e-12));

    auto loss_fn = [&]() { return kt::akt::rasch_penalty(tables, 1e-5); };
    CHECK(kt::grad_check_params(loss_fn, {tables.mu}) <= 1e-4);
    tables.mu.zero_grad();
    {
        kt::Tape tape;
        tape.backward(loss_fn());
    }
    CHECK(tables.mu.grad()[0] == Approx(2e-5).epsilon(1e-9));
    CHECK(tables.mu.grad()[1] == Approx(-4e-5).epsilon(1e-9));
}

TEST_CASE("monotonic attention closed forms", "[akt]") {
    SECTION("equal scores, theta = ln 2, distances {0,1} give [2/3, 1/3]") {
        Tensor q = Tensor::from({2, 2}, {1, 1, 1, 1});
        Tensor k = Tensor::from({2, 2}, {1, 1, 1, 1});  // equal content scores
        Tensor theta = Tensor::scalar(std::log(2.0));
        auto weights = kt::akt::monotonic_attention(q, k, identity_matrix(2), theta,
                                                    causal_spec(2, false));
        // query row 1: distance to key 1 is 0 (weight 2/3), to key 0 is 1 (1/3)
        CHECK(weights.at(1, 1) == Approx(2.0 / 3.0).margin(1e-12));
        CHECK(weights.at(1, 0) == Approx(1.0 / 3.0).margin(1e-12));
    }
    SECTION("theta = 0 reduces to plain causal attention") {
        kt::Rng rng(11);
        const std::size_t t_len = 6, dim = 4;
        std::vector<double> qv(t_len * dim), kv(t_len * dim), vv(t_len * dim);
        for (auto* vec : {&qv, &kv, &vv}) {
            for (double& x : *vec) x = rng.uniform(-1.5, 1.5);
        }
        Tensor q = Tensor::from({t_len, dim}, qv);
        Tensor k = Tensor::from({t_len, dim}, kv);
        Tensor v = Tensor::from({t_len, dim}, vv);
        auto ref = oracle::plain_causal_attention(qv, kv, vv, t_len, dim,
                                                  1.0 / std::sqrt(double(dim)));
        for (DecayMode mode : {DecayMode::index_distance, DecayMode::context_aware}) {
            auto spec = causal_spec(t_len, false);
            spec.mode = mode;
            Tensor out = kt::akt::monotonic_attention(q, k, v, Tensor::scalar(0.0), spec);
            for (std::size_t i = 0; i < out.size(); ++i) {
                CHECK(std::abs(out.data()[i] - ref[i]) < 1e-12);
            }
        }
    }
    SECTION("a single attendable position takes weight exactly 1") {
        kt::Rng rng(4);
        Tensor q = Tensor::from({1, 3}, {0.3, -1.0, 0.5});
        Tensor k = Tensor::from({1, 3}, {1.0, 0.2, -0.4});
        auto w = kt::akt::monotonic_attention(q, k, identity_matrix(1), Tensor::scalar(0.7),
                                              causal_spec(1, false));
        CHECK(w.at(0, 0) == 1.0);
    }
    SECTION("no attendable position is an empty-support error") {
        Tensor q = Tensor::from({1, 2}, {1, 1});
        auto spec = causal_spec(1, true);  // strict: row 0 has no support
        CHECK_THROWS_AS(
            kt::akt::monotonic_attention(q, q, identity_matrix(1), Tensor::scalar(1.0), spec),
            kt::Error);
    }
}

TEST_CASE("attention weights form a simplex and decay monotonically", "[akt]") {
    const std::size_t t_len = 7, dim = 3;
    Tensor q = Tensor::from({t_len, dim}, std::vector<double>(t_len * dim, 0.5));
    Tensor k = q.detached_copy();  // equal content scores everywhere
    for (DecayMode mode : {DecayMode::index_distance, DecayMode::context_aware}) {
        for (double theta : {0.3, 1.0, 2.5}) {
            auto spec = causal_spec(t_len, false);
            spec.mode = mode;
            Tensor w = kt::akt::monotonic_attention(q, k, identity_matrix(t_len),
                                                    Tensor::scalar(theta), spec);
            for (std::size_t t = 0; t < t_len; ++t) {
                double sum = 0.0;
                for (std::size_t u = 0; u < t_len; ++u) {
                    CHECK(w.at(t, u) >= 0.0);
                    if (u > t) CHECK(w.at(t, u) == 0.0);
                    sum += w.at(t, u);
                }
                CHECK(std::abs(sum - 1.0) < 1e-12);
                // at equal scores, weight is non-increasing in temporal distance
                for (std::size_t u = 1; u <= t; ++u) {
                    CHECK(w.at(t, u) >= w.at(t, u - 1) - 1e-12);
                }
            }
        }
    }
}

TEST_CASE("strictly-past attention zeroes the first row", "[akt]") {
    const std::size_t t_len = 5, dim = 3;
    kt::Rng rng(9);
    std::vector<double> qv(t_len * dim);
    for (double& x : qv) x = rng.uniform(-1, 1);
    Tensor q = Tensor::from({t_len, dim}, qv);
    auto spec = causal_spec(t_len, true, true);
    Tensor w = kt::akt::monotonic_attention(q, q, identity_matrix(t_len), Tensor::scalar(0.8),
                                            spec);
    for (std::size_t u = 0; u < t_len; ++u) CHECK(w.at(0, u) == 0.0);
    for (std::size_t t = 1; t < t_len; ++t) {
        double sum = 0.0;
        for (std::size_t u = 0; u < t; ++u) sum += w.at(t, u);
        CHECK(std::abs(sum - 1.0) < 1e-12);  // retrieval weights sum to 1 over tau < t
        for (std::size_t u = t; u < t_len; ++u) CHECK(w.at(t, u) == 0.0);
    }
}

TEST_CASE("encoders are causal and deterministic at T=1", "[akt]") {
    auto cfg = small_config();
    auto model = make_model(cfg, 21);
    kt::Rng rng(13);

    SECTION("T=1 gives a single prediction that repeats deterministically") {
        auto seq = random_seq(1, cfg, rng);
        std::vector<std::size_t> pos_a, pos_b;
        std::vector<double> p_a, p_b;
        model.predict_sequence(seq, pos_a, p_a);
        model.predict_sequence(seq, pos_b, p_b);
        REQUIRE(p_a.size() == 1);
        CHECK(p_a[0] == p_b[0]);
    }
    SECTION("future perturbations leave earlier outputs untouched") {
        for (DecayMode mode : {DecayMode::index_distance, DecayMode::context_aware}) {
            auto cfg2 = small_config(mode);
            auto m = make_model(cfg2, 31);
            auto seq = random_seq(9, cfg2, rng);
            std::vector<std::size_t> positions;
            std::vector<double> base;
            m.predict_sequence(seq, positions, base);

            auto mutated = seq;
            mutated.concepts[7] = (mutated.concepts[7] + 1) % static_cast<int>(cfg2.num_kcs);
            mutated.responses[6] = 1 - mutated.responses[6];
            mutated.questions[8] = (mutated.questions[8] + 2) % static_cast<int>(cfg2.num_questions);
            std::vector<std::size_t> positions2;
            std::vector<double> changed;
            m.predict_sequence(mutated, positions2, changed);

            for (std::size_t i = 0; i < positions.size(); ++i) {
                if (positions[i] <= 5) {
                    CHECK(std::abs(base[i] - changed[i]) <= 1e-12);
                }
            }
        }
    }
}

TEST_CASE("near-zero decay with identical inputs gives identical outputs", "[akt]") {
    // softplus(-40) ~ 4e-18; the decay factor is 1 within double precision
    const std::size_t dim = 8, dh = 4, t_len = 5;
    kt::Rng rng(17);
    kt::akt::EncoderLayer layer;
    auto rnd = [&](std::vector<std::size_t> shape) {
        Tensor t = Tensor::zeros(shape, false);
        for (double& v : t.data()) v = rng.uniform(-0.5, 0.5);
        return t;
    };
    for (int h = 0; h < 2; ++h) {
        layer.attn.heads.push_back(
            {rnd({dim, dh}), rnd({dim, dh}), rnd({dim, dh}), Tensor::scalar(-40.0)});
    }
    layer.attn.wo = rnd({dim, dim});
    layer.ff = {rnd({dim, 12}), rnd({12}), rnd({12, dim}), rnd({dim})};

    std::vector<double> row_vals(dim);
    for (double& v : row_vals) v = rng.uniform(-1, 1);
    std::vector<double> all;
    for (std::size_t t = 0; t < t_len; ++t) all.insert(all.end(), row_vals.begin(), row_vals.end());
    Tensor x = Tensor::from({t_len, dim}, all);
    Tensor out = kt::akt::encode({layer}, x, DecayMode::index_distance, 0.0, nullptr);
    for (std::size_t t = 1; t < t_len; ++t) {
        for (std::size_t j = 0; j < dim; ++j) {
            CHECK(std::abs(out.at(t, j) - out.at(0, j)) < 1e-12);
        }
    }
}

TEST_CASE("prediction head", "[akt]") {
    SECTION("zero head weights give 0.5") {
        AKTModel model(small_config());  // all-zero parameters
        kt::Rng rng(2);
        auto seq = random_seq(4, small_config(), rng);
        std::vector<std::size_t> positions;
        std::vector<double> probs;
        model.predict_sequence(seq, positions, probs);
        for (double p : probs) CHECK(p == 0.5);
    }
    SECTION("outputs stay inside (0,1) over many random draws") {
        auto cfg = small_config();
        cfg.embed_dim = 8;
        cfg.ff_dim = 12;
        auto model = make_model(cfg, 77);
        kt::Rng rng(5);
        std::size_t checked = 0;
        while (checked < 10000) {
            auto seq = random_seq(25, cfg, rng);
            std::vector<std::size_t> positions;
            std::vector<double> probs;
            model.predict_sequence(seq, positions, probs);
            for (double p : probs) {
                CHECK(p > 0.0);
                CHECK(p < 1.0);
            }
            checked += probs.size();
        }
    }
}

TEST_CASE("Rasch collapse: zero mu makes same-KC questions interchangeable", "[akt]") {
    auto cfg = small_config();
    auto model = make_model(cfg, 41);
    for (double& v : model.tables().mu.data()) v = 0.0;  // freeze difficulties at zero

    kt::Rng rng(6);
    auto seq_a = random_seq(8, cfg, rng);
    auto seq_b = seq_a;
    // swap question identities at two positions, keeping the KCs
    seq_b.questions[3] = (seq_a.questions[3] + 1) % static_cast<int>(cfg.num_questions);
    seq_b.questions[6] = (seq_a.questions[6] + 3) % static_cast<int>(cfg.num_questions);

    std::vector<std::size_t> pos_a, pos_b;
    std::vector<double> p_a, p_b;
    model.predict_sequence(seq_a, pos_a, p_a);
    model.predict_sequence(seq_b, pos_b, p_b);
    REQUIRE(p_a.size() == p_b.size());
    for (std::size_t i = 0; i < p_a.size(); ++i) CHECK(p_a[i] == p_b[i]);
}

TEST_CASE("full-model gradients pass finite differences in both decay modes", "[akt]") {
    // h = 3e-4 here: some attention projections have gradients near 1e-9,
    // where the h = 1e-5 difference quotient is dominated by roundoff in the
    // loss itself. The larger step keeps the quotient noise under the 1e-8
    // denominator floor; truncation stays negligible because derivatives
    // along those coordinates are proportionally small.
    const double h = 3e-4;
    kt::Rng seq_rng(71);
    for (DecayMode mode : {DecayMode::index_distance, DecayMode::context_aware}) {
        auto cfg = small_config(mode);
        auto model = make_model(cfg, mode == DecayMode::index_distance ? 1001 : 2002);
        auto seq = random_seq(8, cfg, seq_rng);
        auto loss_fn = [&]() {
            std::size_t n = 0;
            Tensor loss = model.sequence_loss_sum(seq, n, nullptr);
            return kt::add(kt::scale(loss, 1.0 / static_cast<double>(n)), model.regularizer());
        };
        std::vector<Tensor> tensors;
        for (auto& [name, t] : model.parameters()) tensors.push_back(t);
        const double err = kt::grad_check_params(loss_fn, tensors, h);
        INFO("decay mode " << kt::akt::to_string(mode));
        CHECK(err <= 1e-4);
    }
}

TEST_CASE("two stacked knowledge-encoder layers stay differentiable", "[akt]") {
    auto cfg = small_config(DecayMode::index_distance, 2);
    cfg.embed_dim = 8;
    cfg.ff_dim = 10;
    auto model = make_model(cfg, 55);
    kt::Rng rng(8);
    auto seq = random_seq(5, cfg, rng);
    auto loss_fn = [&]() {
        std::size_t n = 0;
        Tensor loss_sum = model.sequence_loss_sum(seq, n, nullptr);
        return kt::scale(loss_sum, 1.0 / static_cast<double>(n));
    };
    std::vector<Tensor> tensors;
    for (auto& [name, t] : model.parameters()) tensors.push_back(t);
    CHECK(kt::grad_check_params(loss_fn, tensors, 3e-4) <= 1e-4);
}

TEST_CASE("checkpoints round-trip", "[akt]") {
    auto cfg = small_config(DecayMode::context_aware);
    auto model = make_model(cfg, 91);
    auto restored = AKTModel::from_checkpoint(model.checkpoint());
    kt::Rng rng(12);
    auto seq = random_seq(7, cfg, rng);
    std::vector<std::size_t> pos_a, pos_b;
    std::vector<double> p_a, p_b;
    model.predict_sequence(seq, pos_a, p_a);
    restored->predict_sequence(seq, pos_b, p_b);
    REQUIRE(p_a.size() == p_b.size());
    for (std::size_t i = 0; i < p_a.size(); ++i) CHECK(p_a[i] == p_b[i]);
}
