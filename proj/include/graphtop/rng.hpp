#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace graphtop {

/// Seeded random stream with hand-rolled transforms. The standard
/// distributions are implementation-defined, so every draw here goes through
/// explicit arithmetic on mt19937_64 output; a given seed yields the same
/// stream on any platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(mix(seed)) {}

    std::uint64_t bits() { return engine_(); }

    /// Uniform on the open interval (0, 1); safe under log().
    double uniform_open() {
        return (static_cast<double>(bits() >> 12) + 0.5) * 0x1.0p-52;
    }

    /// Uniform on [0, 1).
    double uniform() { return static_cast<double>(bits() >> 11) * 0x1.0p-53; }

    /// Unbiased integer in [0, bound).
    std::uint64_t uniform_int(std::uint64_t bound) {
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        std::uint64_t x;
        do {
            x = bits();
        } while (x >= limit);
        return x % bound;
    }

    /// Standard normal via Box-Muller (two uniforms per draw).
    double normal() {
        const double u1 = uniform_open();
        const double u2 = uniform_open();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    /// Gumbel(0, 1): -ln(-ln(u)) with u in (0, 1).
    double gumbel() { return -std::log(-std::log(uniform_open())); }

    /// Derive an independent stream for a subtask.
    Rng fork(std::uint64_t salt) { return Rng(bits() ^ mix(salt)); }

private:
    static std::uint64_t mix(std::uint64_t x) {
        // splitmix64 finalizer, decorrelates small consecutive seeds
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

    std::mt19937_64 engine_;
};

}  // namespace graphtop
