#pragma once

#include <cstdint>
#include <random>

namespace tucka {

/// Seeded random source. Every randomized routine in the library takes an
/// explicit seed or an Rng reference; there is no global generator.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    /// Uniform draw from [lo, hi).
    double uniform(double lo, double hi) {
        std::uniform_real_distribution<double> dist(lo, hi);
        return dist(gen_);
    }

    /// Standard normal draw.
    double gaussian() {
        std::normal_distribution<double> dist(0.0, 1.0);
        return dist(gen_);
    }

    /// Uniform integer in [0, n).
    std::size_t index(std::size_t n) {
        std::uniform_int_distribution<std::size_t> dist(0, n - 1);
        return dist(gen_);
    }

    std::mt19937_64& engine() { return gen_; }

private:
    std::mt19937_64 gen_;
};

}  // namespace tucka
