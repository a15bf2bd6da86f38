#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "kt/bkt.hpp"
#include "kt/rng.hpp"
#include "oracles.hpp"

using Catch::Approx;
using kt::bkt::BKTParams;

namespace {

const BKTParams kRef{0.5, 0.2, 0.1, 0.2};

// Plain BKT student simulator (no prerequisites, no forgetting).
std::vector<int> simulate(const BKTParams& p, std::size_t steps, kt::Rng& rng) {
    std::vector<int> out;
    bool mastered = rng.bernoulli(p.pL0);
    for (std::size_t t = 0; t < steps; ++t) {
        const double pc = mastered ? 1.0 - p.pS : p.pG;
        out.push_back(rng.bernoulli(pc) ? 1 : 0);
        if (!mastered && rng.bernoulli(p.pT)) mastered = true;
    }
    return out;
}

}  // namespace

TEST_CASE("predict_correct closed forms", "[bkt]") {
    CHECK(kt::bkt::predict_correct(kRef, kRef.pL0) == Approx(0.55).epsilon(1e-12));
    BKTParams clean{0.5, 0.2, 0.0, 0.0};
    CHECK(kt::bkt::predict_correct(clean, 0.37) == Approx(0.37).epsilon(1e-12));
    BKTParams coin{0.5, 0.2, 0.5, 0.5};
    for (double m : {0.0, 0.25, 0.8, 1.0}) {
        CHECK(kt::bkt::predict_correct(coin, m) == Approx(0.5).epsilon(1e-12));
    }
}

TEST_CASE("predict_correct is affine in mastery with slope 1-pS-pG", "[bkt]") {
    kt::Rng rng(7);
    for (int rep = 0; rep < 100; ++rep) {
        BKTParams p{rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform()};
        const double slope = kt::bkt::predict_correct(p, 1.0) - kt::bkt::predict_correct(p, 0.0);
        CHECK(slope == Approx(1.0 - p.pS - p.pG).margin(1e-12));
        CHECK((slope > 0) == (p.pG + p.pS < 1.0));
        const double mid = kt::bkt::predict_correct(p, 0.5);
        CHECK(mid == Approx(0.5 * (kt::bkt::predict_correct(p, 0.0) +
                                   kt::bkt::predict_correct(p, 1.0)))
                         .margin(1e-12));
    }
}

TEST_CASE("posterior_update hand computation", "[bkt]") {
    // P(L|correct) = 0.45/0.55 = 9/11; after transition 9/11 + (2/11)(0.2) = 47/55
    const double updated = kt::bkt::posterior_update(kRef, kRef.pL0, 1);
    CHECK(updated == Approx(47.0 / 55.0).epsilon(1e-12));

    BKTParams inert{0.4, 0.0, 0.5, 0.5};
    CHECK(kt::bkt::posterior_update(inert, 0.4, 1) == Approx(0.4).epsilon(1e-12));
    CHECK(kt::bkt::posterior_update(inert, 0.4, 0) == Approx(0.4).epsilon(1e-12));

    // mastery 1 is absorbing under zero forgetting
    CHECK(kt::bkt::posterior_update(kRef, 1.0, 1) == 1.0);
    CHECK(kt::bkt::posterior_update(kRef, 1.0, 0) == 1.0);
}

TEST_CASE("posterior_update rejects zero-probability evidence", "[bkt]") {
    BKTParams p{0.0, 0.1, 0.1, 0.0};  // mastery 0, pG 0 => correct impossible
    try {
        kt::bkt::posterior_update(p, 0.0, 1);
        FAIL("expected degenerate-evidence error");
    } catch (const kt::Error& e) {
        CHECK(e.kind() == kt::ErrorKind::degenerate_evidence);
    }
}

TEST_CASE("sequence likelihood closed forms", "[bkt]") {
    CHECK(kt::bkt::sequence_likelihood(kRef, {1}) == Approx(0.55).epsilon(1e-12));
    // filtered: 0.55 * predict_correct(47/55) = 0.55 * (43.9/55) = 0.439,
    // matching the 4-path enumeration exactly
    CHECK(kt::bkt::sequence_likelihood(kRef, {1, 1}) == Approx(0.439).epsilon(1e-12));
    CHECK(kt::bkt::sequence_likelihood(kRef, {1, 1}) ==
          Approx(oracle::bkt_likelihood_bruteforce(0.5, 0.2, 0.1, 0.2, {1, 1})).epsilon(1e-13));

    BKTParams coin{0.3, 0.2, 0.5, 0.5};
    CHECK(kt::bkt::sequence_likelihood(coin, {1, 0, 1, 1, 0}) ==
          Approx(std::pow(0.5, 5)).epsilon(1e-12));
}

TEST_CASE("filtered likelihood equals exhaustive path enumeration", "[bkt]") {
    kt::Rng rng(41);
    for (int rep = 0; rep < 60; ++rep) {
        BKTParams p{rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95),
                    rng.uniform(0.05, 0.95)};
        const std::size_t n = 1 + rng.index(8);
        std::vector<int> seq(n);
        for (auto& y : seq) y = rng.bernoulli(0.5) ? 1 : 0;
        const double filtered = kt::bkt::sequence_likelihood(p, seq);
        const double brute = oracle::bkt_likelihood_bruteforce(p.pL0, p.pT, p.pS, p.pG, seq);
        CHECK(std::abs(filtered - brute) < 1e-12);
    }
}

TEST_CASE("consecutive correct observations never lower mastery", "[bkt]") {
    kt::Rng rng(43);
    for (int rep = 0; rep < 50; ++rep) {
        BKTParams p;
        p.pL0 = rng.uniform(0.05, 0.95);
        p.pT = rng.uniform(0.01, 0.9);
        p.pS = rng.uniform(0.01, 0.45);
        p.pG = rng.uniform(0.01, 1.0 - p.pS - 0.05);
        double m = p.pL0;
        for (int t = 0; t < 10; ++t) {
            const double next = kt::bkt::posterior_update(p, m, 1);
            CHECK(next >= m - 1e-12);
            m = next;
        }
    }
}

TEST_CASE("EM recovers generating parameters on synthetic data", "[bkt]") {
    const BKTParams truth{0.3, 0.25, 0.1, 0.15};
    kt::Rng rng(2024);
    std::vector<std::vector<int>> data;
    for (int u = 0; u < 500; ++u) data.push_back(simulate(truth, 20, rng));

    std::vector<double> trace;
    const BKTParams fitted = kt::bkt::fit(data, {}, &trace);
    CHECK(std::abs(fitted.pL0 - truth.pL0) <= 0.05);
    CHECK(std::abs(fitted.pT - truth.pT) <= 0.05);
    CHECK(std::abs(fitted.pS - truth.pS) <= 0.05);
    CHECK(std::abs(fitted.pG - truth.pG) <= 0.05);

    REQUIRE(trace.size() >= 2);
    for (std::size_t i = 1; i < trace.size(); ++i) CHECK(trace[i] >= trace[i - 1] - 1e-9);
}

TEST_CASE("grid fit respects the identifiability constraint", "[bkt]") {
    const BKTParams truth{0.4, 0.3, 0.1, 0.2};
    kt::Rng rng(77);
    std::vector<std::vector<int>> data;
    for (int u = 0; u < 120; ++u) data.push_back(simulate(truth, 15, rng));
    kt::bkt::FitOptions opt;
    opt.method = kt::bkt::FitMethod::grid;
    opt.grid_step = 0.1;
    const BKTParams fitted = kt::bkt::fit(data, opt);
    CHECK(fitted.identifiable());
    CHECK(std::abs(fitted.pL0 - truth.pL0) <= 0.15);
}

TEST_CASE("degenerate fits stay inside the clamp", "[bkt]") {
    SECTION("all-correct data hits the boundary without numeric failure") {
        std::vector<std::vector<int>> data(40, std::vector<int>(12, 1));
        const BKTParams fitted = kt::bkt::fit(data);
        CHECK(fitted.valid());
        CHECK(fitted.pS <= 0.05);
        const double ll = kt::bkt::sequences_log_likelihood(fitted, data);
        CHECK(std::isfinite(ll));
    }
    SECTION("single observation yields a valid estimate") {
        const BKTParams fitted = kt::bkt::fit({{1}});
        CHECK(fitted.valid());
        CHECK(fitted.identifiable());
    }
    SECTION("empty group is an insufficient-data error") {
        try {
            kt::bkt::fit({});
            FAIL("expected insufficient-data error");
        } catch (const kt::Error& e) {
            CHECK(e.kind() == kt::ErrorKind::insufficient_data);
        }
    }
}

TEST_CASE("per-KC tables serialize losslessly", "[bkt]") {
    kt::Rng rng(5);
    std::map<int, std::vector<std::vector<int>>> grouped;
    const BKTParams a{0.2, 0.3, 0.1, 0.2}, b{0.6, 0.1, 0.2, 0.1};
    for (int u = 0; u < 60; ++u) {
        grouped[3].push_back(simulate(a, 12, rng));
        grouped[9].push_back(simulate(b, 12, rng));
    }
    const auto table = kt::bkt::fit_per_kc(grouped);
    const auto round = kt::bkt::table_from_json(kt::bkt::to_json(table));
    CHECK(round.per_kc.size() == 2);
    CHECK(round.params_for(3).pL0 == table.params_for(3).pL0);
    CHECK(round.params_for(9).pG == table.params_for(9).pG);
    CHECK(round.params_for(1234).pT == table.fallback.pT);  // unseen KC -> fallback
}
