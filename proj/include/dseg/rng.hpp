// Copyright (c) 2026, the dseg authors
// SPDX-License-Identifier: Apache-2.0
//
// Seeded RNG with a fixed algorithm so generated bytes are stable across
// compilers and standard libraries.

#pragma once

#include <cmath>
#include <cstdint>

namespace dseg {

/// splitmix64 core; good enough statistical quality for data synthesis and
/// weight init, and trivially reproducible.
struct Rng {
    std::uint64_t state = 0x9e3779b97f4a7c15ull;

    Rng() = default;
    explicit Rng(std::uint64_t seed) : state(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    int below(int n) {
        return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n));
    }

    /// Box-Muller; consumes two uniforms per pair, caches the second value.
    double normal() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        cached_ = r * std::sin(a);
        have_cached_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

private:
    bool have_cached_ = false;
    double cached_ = 0.0;
};

/// Derive an independent stream from (master seed, index), e.g. one stream per
/// generated scene.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
    Rng r(master ^ (0xd1342543de82ef95ull * (index + 1)));
    r.next_u64();
    return r.next_u64();
}

} // namespace dseg
