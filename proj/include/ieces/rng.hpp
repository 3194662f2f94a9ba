#pragma once

#include <cstdint>
#include <random>

namespace ieces {

// Deterministic stream derivation: mixes a base seed with stream tags so
// independent consumers (augmentation, pairing, shuffling, init) never
// share or desynchronize state.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ull + b * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    return mix_seed(mix_seed(a, b), c);
}

// Distributions are hand-rolled on top of mt19937_64 output; the standard
// library's distribution objects are implementation-defined and would break
// byte-identical replay across toolchains.
struct Rng {
    explicit Rng(std::uint64_t seed) : engine(seed) {}

    std::uint64_t next() { return engine(); }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(engine() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    std::uint64_t below(std::uint64_t n) { return n ? engine() % n : 0; }

    int uniform_int(int lo, int hi) {  // inclusive bounds
        return lo + static_cast<int>(below(static_cast<std::uint64_t>(hi - lo + 1)));
    }

    double normal(double mean, double stddev) {
        // Box-Muller, one draw per call (second half discarded for simplicity).
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        return mean + stddev * r * std::cos(6.283185307179586 * u2);
    }

    std::mt19937_64 engine;
};

}  // namespace ieces
