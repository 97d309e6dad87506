#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

#include "digest.hpp"

namespace sectordiff {

// Counter-based deterministic generator.
//
// Key derivation: key = mix64(mix64(seed ^ SALT) ^ mix64(fnv1a64(stream) + index * GOLDEN)).
// Word n of a stream is mix64(key + n * GOLDEN), so a stream is a pure
// function of (seed, stream name, index, counter): parallel workers draw
// reproducible values regardless of scheduling, and consuming words from
// one stream never perturbs any other stream.
class Rng {
public:
    static constexpr uint64_t kGolden = 0x9e3779b97f4a7c15ull;

    Rng(uint64_t seed, std::string_view stream, uint64_t index = 0)
        : key_(derive_key(seed, stream, index)) {}

    static uint64_t mix64(uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    static uint64_t derive_key(uint64_t seed, std::string_view stream, uint64_t index = 0) {
        return mix64(mix64(seed ^ 0x2545f4914f6cdd1dull) ^ mix64(fnv1a64(stream) + index * kGolden));
    }

    uint64_t next_u64() { return mix64(key_ + (++counter_) * kGolden); }

    // [0, 1)
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Unbiased integer in [0, n).
    uint64_t uniform_int(uint64_t n) {
        const uint64_t limit = ~0ull - ~0ull % n;
        uint64_t w;
        do {
            w = next_u64();
        } while (w >= limit);
        return w % n;
    }

    // Standard normal via Box-Muller; the paired value is cached so each
    // stream's sequence stays deterministic.
    double normal() {
        if (have_cache_) {
            have_cache_ = false;
            return cache_;
        }
        const double u1 = double((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
        const double u2 = double(next_u64() >> 11) * 0x1.0p-53;
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * std::numbers::pi * u2;
        cache_ = r * std::sin(a);
        have_cache_ = true;
        return r * std::cos(a);
    }

private:
    uint64_t key_ = 0;
    uint64_t counter_ = 0;
    double cache_ = 0.0;
    bool have_cache_ = false;
};

// Fans one global seed out to named sub-seeds (e.g. per training step).
inline uint64_t derive_seed(uint64_t seed, std::string_view stream, uint64_t index = 0) {
    return Rng::derive_key(seed, stream, index);
}

}  // namespace sectordiff
