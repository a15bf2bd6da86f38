#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace kt {

// Deterministic draws on top of mt19937_64. std::*_distribution output is
// implementation-defined, so everything that must reproduce bit-for-bit
// goes through these fixed transforms instead.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next() { return gen_(); }

    // [0, 1)
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    bool bernoulli(double p) { return uniform() < p; }

    // uniform in {0, ..., n-1}; n > 0. Modulo bias is irrelevant at the
    // sizes used here and keeps the draw count fixed.
    std::size_t index(std::size_t n) { return static_cast<std::size_t>(next() % n); }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[index(i)]);
        }
    }

private:
    std::mt19937_64 gen_;
};

}  // namespace kt
