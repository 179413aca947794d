#include "finsent/rng.hpp"

#include <cmath>

#include "finsent/errors.hpp"

namespace finsent {

namespace {

uint64_t splitmix64(uint64_t& x) {
    x += 0x9E3779B97F4A7C15ull;
    uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

uint64_t rotl(uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
}

}  // namespace

Rng::Rng(uint64_t seed) {
    uint64_t sm = seed;
    for (auto& s : state_) s = splitmix64(sm);
}

uint64_t Rng::next_u64() {
    const uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
}

double Rng::next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

float Rng::next_float() {
    return static_cast<float>(next_u64() >> 40) * 0x1.0p-24f;
}

float Rng::next_normal(float mean, float stddev) {
    double z;
    if (has_spare_) {
        has_spare_ = false;
        z = spare_;
    } else {
        // Box-Muller on (0,1] x [0,1) so the log argument is never zero.
        const double u1 = 1.0 - next_double();
        const double u2 = next_double();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        z = r * std::cos(theta);
        spare_ = r * std::sin(theta);
        has_spare_ = true;
    }
    return mean + stddev * static_cast<float>(z);
}

uint64_t Rng::next_below(uint64_t n) {
    if (n == 0) throw ContractError("Rng::next_below: n must be > 0");
    const uint64_t threshold = (0 - n) % n;  // 2^64 mod n
    for (;;) {
        const uint64_t r = next_u64();
        if (r >= threshold) return r % n;
    }
}

uint64_t Rng::derive(uint64_t base, uint64_t salt) {
    uint64_t x = base ^ (salt * 0x9E3779B97F4A7C15ull);
    return splitmix64(x);
}

}  // namespace finsent
