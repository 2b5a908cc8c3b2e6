#pragma once

#include <cstdint>
#include <random>

namespace di3cl {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to derive independent stream seeds.
inline std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

/// Deterministic generator for (seed, stream, index). Lets a resumed run reproduce
/// the exact draws of an uninterrupted one without serializing generator state.
inline Rng derive_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0) {
    return Rng(mix_seed(mix_seed(seed ^ mix_seed(stream)) + index));
}

template <typename T>
T uniform(Rng& rng, T lo, T hi) {
    // Explicit formula instead of std::uniform_real_distribution so draws do not
    // depend on the standard library's implementation.
    const double u = static_cast<double>(rng() >> 11) * (1.0 / 9007199254740992.0);
    return static_cast<T>(lo + (hi - lo) * u);
}

inline bool bernoulli(Rng& rng, double p) { return uniform<double>(rng, 0.0, 1.0) < p; }

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
    return static_cast<std::size_t>(uniform<double>(rng, 0.0, 1.0) * static_cast<double>(n)) % n;
}

/// Fisher-Yates with uniform_index, stable across standard libraries.
template <typename Vec>
void shuffle(Vec& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const std::size_t j = uniform_index(rng, i);
        std::swap(v[i - 1], v[j]);
    }
}

}  // namespace di3cl
