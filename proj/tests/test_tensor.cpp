#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "kt/tensor.hpp"
#include "oracles.hpp"

using kt::Tensor;
using Catch::Approx;

namespace {

Tensor mat2(std::vector<std::vector<double>> rows, bool rg = false) {
    std::vector<double> flat;
    for (auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
    return Tensor::from({rows.size(), rows[0].size()}, flat, rg);
}

}  // namespace

TEST_CASE("matmul identity and basis selection", "[tensor]") {
    Tensor eye = mat2({{1, 0}, {0, 1}});
    Tensor a = mat2({{1, 2}, {3, 4}});
    Tensor r = kt::matmul(eye, a);
    CHECK(r.at(0, 0) == 1.0);
    CHECK(r.at(0, 1) == 2.0);
    CHECK(r.at(1, 0) == 3.0);
    CHECK(r.at(1, 1) == 4.0);

    Tensor sel = mat2({{1, 0}, {0, 0}});
    Tensor v = mat2({{5}, {7}});
    Tensor s = kt::matmul(sel, v);
    CHECK(s.at(0, 0) == 5.0);
    CHECK(s.at(1, 0) == 0.0);
}

TEST_CASE("matmul agrees with triple-loop oracle", "[tensor]") {
    kt::Rng rng(11);
    for (int rep = 0; rep < 40; ++rep) {
        const std::size_t m = 1 + rng.index(16), k = 1 + rng.index(16), n = 1 + rng.index(16);
        std::vector<double> a(m * k), b(k * n);
        for (auto& x : a) x = rng.uniform(-2, 2);
        for (auto& x : b) x = rng.uniform(-2, 2);
        Tensor ta = Tensor::from({m, k}, a);
        Tensor tb = Tensor::from({k, n}, b);
        Tensor tc = kt::matmul(ta, tb);
        auto ref = oracle::matmul_naive(a, b, m, k, n);
        for (std::size_t i = 0; i < ref.size(); ++i) {
            CHECK(std::abs(tc.data()[i] - ref[i]) < 1e-12);
        }
    }
}

TEST_CASE("matmul shape mismatch names both shapes", "[tensor]") {
    Tensor a = mat2({{1, 2, 3}});
    Tensor b = mat2({{1, 2}});
    try {
        kt::matmul(a, b);
        FAIL("expected dimension error");
    } catch (const kt::Error& e) {
        CHECK(e.kind() == kt::ErrorKind::dimension);
        CHECK(std::string(e.what()).find("[1x3]") != std::string::npos);
        CHECK(std::string(e.what()).find("[1x2]") != std::string::npos);
    }
}

TEST_CASE("elementwise closed forms", "[tensor]") {
    CHECK(kt::sigmoid(Tensor::scalar(0.0)).value() == Approx(0.5).margin(1e-15));
    CHECK(kt::tanh(Tensor::scalar(0.0)).value() == 0.0);
    CHECK(kt::sigmoid(Tensor::scalar(std::log(3.0))).value() == Approx(0.75).margin(1e-12));
    CHECK(kt::exp(Tensor::scalar(1.0)).value() == Approx(std::exp(1.0)));
}

TEST_CASE("elementwise broadcasting rules", "[tensor]") {
    Tensor a = Tensor::from({3}, {1, 2, 3});
    Tensor s = Tensor::scalar(2.0);
    Tensor r = kt::mul(a, s);
    CHECK(r.at(2) == 6.0);
    Tensor b = Tensor::from({2}, {1, 2});
    CHECK_THROWS_AS(kt::add(a, b), kt::Error);
}

TEST_CASE("non-finite op results are rejected", "[tensor]") {
    CHECK_THROWS_AS(kt::exp(Tensor::scalar(1e4)), kt::Error);
    CHECK_THROWS_AS(kt::log(Tensor::scalar(0.0)), kt::Error);
}

TEST_CASE("masked_softmax examples", "[tensor]") {
    Tensor one = Tensor::from({1}, {5.0});
    Tensor r1 = kt::masked_softmax(one, {1});
    CHECK(r1.value() == 1.0);

    Tensor z = Tensor::from({3}, {0, 0, 0});
    Tensor r2 = kt::masked_softmax(z, {1, 1, 1});
    for (int i = 0; i < 3; ++i) CHECK(r2.at(i) == Approx(1.0 / 3.0).margin(1e-15));

    Tensor l = Tensor::from({2}, {std::log(2.0), 0.0});
    Tensor r3 = kt::masked_softmax(l, {1, 1});
    CHECK(r3.at(0) == Approx(2.0 / 3.0).margin(1e-12));
    CHECK(r3.at(1) == Approx(1.0 / 3.0).margin(1e-12));

    CHECK_THROWS_AS(kt::masked_softmax(z, {0, 0, 0}), kt::Error);
}

TEST_CASE("masked_softmax simplex and shift invariance", "[tensor]") {
    kt::Rng rng(5);
    for (int rep = 0; rep < 200; ++rep) {
        const std::size_t n = 1 + rng.index(12);
        std::vector<double> logits(n);
        kt::BoolMask mask(n);
        bool any = false;
        for (std::size_t i = 0; i < n; ++i) {
            logits[i] = rng.uniform(-30, 30);
            mask[i] = rng.bernoulli(0.7) ? 1 : 0;
            any = any || mask[i];
        }
        if (!any) mask[rng.index(n)] = 1;
        Tensor t = Tensor::from({n}, logits);
        Tensor y = kt::masked_softmax(t, mask);
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (mask[i]) {
                CHECK(y.at(i) > 0.0);
                s += y.at(i);
            } else {
                CHECK(y.at(i) == 0.0);  // exact zero off support
            }
        }
        CHECK(std::abs(s - 1.0) < 1e-12);

        const double c = rng.uniform(-50, 50);
        std::vector<double> shifted = logits;
        for (auto& v : shifted) v += c;
        Tensor y2 = kt::masked_softmax(Tensor::from({n}, shifted), mask);
        for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(y2.at(i) - y.at(i)) < 1e-12);
    }
}

TEST_CASE("backward through identity and products", "[tensor]") {
    SECTION("loss = x directly") {
        Tensor x = Tensor::scalar(3.0, true);
        kt::Tape tape;
        tape.backward(x);
        CHECK(x.grad()[0] == 1.0);
    }
    SECTION("loss = sum(x*x)") {
        Tensor x = Tensor::from({2}, {1, 2}, true);
        kt::Tape tape;
        Tensor loss = kt::sum(kt::mul(x, x));
        tape.backward(loss);
        CHECK(x.grad()[0] == Approx(2.0));
        CHECK(x.grad()[1] == Approx(4.0));
    }
    SECTION("repeated backward accumulates") {
        Tensor x = Tensor::scalar(2.0, true);
        kt::Tape tape;
        Tensor loss = kt::mul(x, x);
        tape.backward(loss);
        tape.backward(loss);
        CHECK(x.grad()[0] == Approx(8.0));
    }
    SECTION("non-scalar loss is a contract error") {
        Tensor x = Tensor::from({2}, {1, 2}, true);
        kt::Tape tape;
        Tensor y = kt::mul(x, x);
        CHECK_THROWS_AS(tape.backward(y), kt::Error);
    }
}

TEST_CASE("grad_check on closed-form cases", "[tensor]") {
    auto f_sig = [](const Tensor& x) { return kt::sum(kt::sigmoid(x)); };
    CHECK(kt::grad_check(f_sig, Tensor::from({3}, {0, 0, 0})) <= 1e-6);

    auto f_const = [](const Tensor& x) {
        return kt::mul(kt::sum(x), Tensor::scalar(0.0));
    };
    CHECK(kt::grad_check(f_const, Tensor::from({4}, {1, 2, 3, 4})) == 0.0);
}

TEST_CASE("composite graphs match central differences", "[tensor]") {
    kt::Rng rng(17);
    for (int rep = 0; rep < 10; ++rep) {
        std::vector<double> vals(6);
        for (auto& v : vals) v = rng.uniform(-1.5, 1.5);
        auto f = [](const Tensor& x) {
            Tensor a = kt::tanh(x);
            Tensor b = kt::sigmoid(kt::mul(x, Tensor::scalar(0.7)));
            Tensor c = kt::add(kt::mul(a, b), kt::exp(kt::scale(x, 0.2)));
            Tensor m = Tensor::from({2, 6}, {1, -1, 0.5, 2, 0, 1, 0.3, 1, 1, -2, 0.5, 0});
            Tensor mixed = kt::matmul(m, c);
            kt::BoolMask mask = {1, 1};
            Tensor w = kt::masked_softmax(mixed, mask);
            return kt::sum(kt::mul(w, mixed));
        };
        CHECK(kt::grad_check(f, Tensor::from({6}, vals)) <= 1e-4);
    }
}

TEST_CASE("structural ops propagate gradients", "[tensor]") {
    kt::Rng rng(23);
    std::vector<double> vals(12);
    for (auto& v : vals) v = rng.uniform(-1, 1);
    auto f = [](const Tensor& x) {
        // exercise row/col/pick/concat/stack/add_rowvec/transpose in one graph
        Tensor m = kt::stack_rows({kt::tanh(x), kt::sigmoid(x), kt::scale(x, 0.5)});  // 3 x 12
        Tensor mt = kt::transpose(m);                                                 // 12 x 3
        Tensor r = kt::row(mt, 2);
        Tensor c = kt::col(mt, 1);
        Tensor joined = kt::concat(r, kt::concat(kt::pick(c, 3), r));
        Tensor withv = kt::add_rowvec(m, x);
        return kt::add(kt::sum(joined), kt::add(kt::sum(withv), kt::dot(r, r)));
    };
    CHECK(kt::grad_check(f, Tensor::from({12}, vals)) <= 1e-5);
}

TEST_CASE("clamp gradient is pass-through inside the interval", "[tensor]") {
    auto f = [](const Tensor& x) { return kt::sum(kt::clamp(x, -0.5, 0.5)); };
    Tensor x = Tensor::from({3}, {0.2, -0.9, 1.4}, true);
    kt::Tape tape;
    Tensor loss = f(x);
    tape.backward(loss);
    CHECK(x.grad()[0] == 1.0);
    CHECK(x.grad()[1] == 0.0);
    CHECK(x.grad()[2] == 0.0);
}

TEST_CASE("dropout is identity at rate zero and rescales otherwise", "[tensor]") {
    kt::Rng rng(3);
    Tensor x = Tensor::from({4}, {1, 2, 3, 4});
    Tensor same = kt::dropout(x, 0.0, rng);
    CHECK(same.node().get() == x.node().get());

    kt::Rng rng2(3);
    Tensor y = kt::dropout(x, 0.5, rng2);
    for (std::size_t i = 0; i < 4; ++i) {
        const double v = y.at(i);
        CHECK((v == 0.0 || v == Approx(2.0 * x.at(i))));
    }
}
