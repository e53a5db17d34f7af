#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace ptu {

// xoshiro256++ with splitmix64 seeding. Self-contained so that seeded traces
// are identical across platforms and standard-library versions; several tests
// freeze values derived from these streams.
class Rng {
public:
    explicit Rng(uint64_t seed) {
        uint64_t x = seed;
        for (auto& w : state_) w = splitmix64(x);
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). n must be positive.
    uint64_t below(uint64_t n) {
        // Rejection sampling to avoid modulo bias.
        const uint64_t limit = ~uint64_t{0} - (~uint64_t{0} % n);
        uint64_t x = next_u64();
        while (x >= limit) x = next_u64();
        return x % n;
    }

    // Standard normal via Box-Muller. Draws two uniforms per call so the
    // stream position does not depend on hidden cache state.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    double normal(double mean, double std) { return mean + std * normal(); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    std::array<uint64_t, 4> state() const { return state_; }
    void set_state(const std::array<uint64_t, 4>& s) { state_ = s; }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    static uint64_t splitmix64(uint64_t& x) {
        uint64_t z = (x += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    std::array<uint64_t, 4> state_{};
};

// Stable sub-seed derivation: every random decision in a run is keyed by the
// master seed plus a purpose label (and optional counters), so independent
// streams never alias and resumption can rebuild any stream from scratch.
inline uint64_t derive_seed(uint64_t master, const std::string& purpose, uint64_t a = 0,
                            uint64_t b = 0) {
    uint64_t h = 0xcbf29ce484222325ull ^ master;
    auto mix = [&h](uint64_t v) {
        h ^= v;
        h *= 0x100000001b3ull;
        h ^= h >> 29;
    };
    for (const char c : purpose) mix(static_cast<uint64_t>(static_cast<unsigned char>(c)));
    mix(a);
    mix(b);
    h ^= h >> 32;
    return h;
}

}  // namespace ptu
