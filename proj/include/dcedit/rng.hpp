#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace dcedit {

/// splitmix64: the documented generator behind every seeded quantity in the
/// project (weights, embeddings, synthetic latents). Chosen because the whole
/// stream is defined by a dozen lines of integer arithmetic, so "same seed,
/// same bits" holds within a build with no dependence on libstdc++
/// distribution internals.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1), 53 bits of mantissa.
    double next_unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    /// Uniform in [-bound, bound).
    double next_symmetric(double bound) { return bound * (2.0 * next_unit() - 1.0); }

    /// Standard normal via Box-Muller; consumes two draws per sample.
    double next_gaussian() {
        double u1 = 1.0 - next_unit();  // (0, 1]
        double u2 = next_unit();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

private:
    std::uint64_t state_;
};

inline std::uint64_t splitmix64_once(std::uint64_t x) {
    return SplitMix64(x).next();
}

/// FNV-1a, used to key word embeddings by spelling.
inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

/// Derives an independent stream for (seed, slot, role). Weight matrices use
/// role = matrix kind and slot = layer index; word embeddings use slot =
/// fnv1a64(word).
inline std::uint64_t stream_key(std::uint64_t seed, std::uint64_t slot, std::uint64_t role) {
    std::uint64_t k = splitmix64_once(seed ^ 0x9E3779B97F4A7C15ULL * (role + 1));
    return splitmix64_once(k ^ 0xBF58476D1CE4E5B9ULL * (slot + 1));
}

}  // namespace dcedit
