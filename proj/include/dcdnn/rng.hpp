#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace dcdnn {

// Generator identifier recorded in model headers. Bump if the draw sequence
// ever changes; models carry it so provenance stays checkable.
inline constexpr std::uint32_t kGeneratorId = 1;  // mt19937_64 + Box-Muller
inline constexpr const char* kGeneratorName = "mt19937_64/box-muller";

// splitmix64 finalizer; used to derive independent stream seeds from one
// master seed without correlated low bits.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    return mix_seed(mix_seed(seed, a), b);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b,
                              std::uint64_t c) {
    return mix_seed(mix_seed(seed, a, b), c);
}

// Deterministic RNG wrapper. mt19937_64 output is pinned by the standard;
// the uniform/gaussian transforms are written out explicitly because the
// std distributions are not bit-portable across library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    // Uniform in [0, n). Modulo bias is below 2^-32 for the n used here.
    std::uint32_t below(std::uint32_t n) {
        return static_cast<std::uint32_t>(gen_() % n);
    }

    // Standard normal via Box-Muller; the spare keeps pair draws in sync.
    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    double gaussian(double mean, double stddev) { return mean + stddev * gaussian(); }

private:
    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace dcdnn
