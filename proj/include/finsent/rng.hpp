#pragma once

#include <cstdint>
#include <cstddef>
#include <utility>
#include <vector>

namespace finsent {

/// Deterministic random generator: xoshiro256** (Blackman & Vigna), state
/// seeded through splitmix64. Every stochastic operation in this codebase
/// takes an Rng explicitly; the std:: distributions are never used, so a
/// given seed produces the same stream on every platform.
class Rng {
public:
    explicit Rng(uint64_t seed);

    uint64_t next_u64();

    /// Uniform in [0,1), 53 random bits.
    double next_double();

    /// Uniform in [0,1), 24 random bits (float precision).
    float next_float();

    /// Normal(mean, stddev) via Box-Muller, computed in double with a cached
    /// spare so draws come in a fixed order.
    float next_normal(float mean, float stddev);

    /// Uniform integer in [0, n), rejection-sampled (unbiased). n must be > 0.
    uint64_t next_below(uint64_t n);

    /// Fisher-Yates shuffle driven by next_below.
    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    /// Derives an independent stream seed from a base seed and a salt
    /// (epoch index, depth, ...). Documented so runs are reproducible from
    /// the single top-level seed.
    static uint64_t derive(uint64_t base, uint64_t salt);

private:
    uint64_t state_[4];
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace finsent
