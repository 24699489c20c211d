#pragma once

#include <cstdint>
#include <random>

namespace scenes {

// One round of splitmix64. Stateless mixer, good avalanche.
inline uint64_t splitmix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// Derives an independent seed from a root seed and up to two stream indices.
// Used for per-scene dataset seeds, per-(step, expert) noise streams, etc.
inline uint64_t derive_seed(uint64_t root, uint64_t a, uint64_t b = 0) {
    uint64_t s = splitmix64(root);
    s = splitmix64(s ^ (a + 0x9E3779B97F4A7C15ULL));
    s = splitmix64(s ^ (b + 0xD1B54A32D192ED03ULL));
    return s;
}

// Uniform integer in [lo, hi], fully specified (no library-defined
// distribution involved) so streams are stable across toolchains.
inline int64_t uniform_int(std::mt19937_64& rng, int64_t lo, int64_t hi) {
    const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int64_t>(rng() % span);
}

// Uniform double in [0, 1) with 53 random bits.
inline double uniform_unit(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

template <typename T>
void fisher_yates(std::mt19937_64& rng, std::vector<T>& items) {
    for (int64_t i = static_cast<int64_t>(items.size()) - 1; i > 0; --i) {
        const int64_t j = uniform_int(rng, 0, i);
        std::swap(items[i], items[j]);
    }
}

}  // namespace scenes
